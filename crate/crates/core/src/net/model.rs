//! Forward and reverse pass of the pre-norm causal transformer.
//!
//! Sequences of different lengths are packed row-wise into one activation
//! matrix; position-wise maps run as single GEMMs over all rows, attention
//! runs per sequence and head.

use crate::error::{config_err, Error, Result};
use crate::net::gemm::{mm, mm_nt, mm_strided, mm_tn};
use crate::net::params::{LayerSlots, Params};
use crate::net::tokens::{Token, TokenSeq};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Which part of the vocabulary the loss softmax ranges over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HeadMask {
    #[default]
    Full,
    /// Only the episodic symbol region `[0, v_epi)`.
    Episodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &Params) -> Self {
        Gradients { data: vec![0.0; p.len()] }
    }

    pub fn tensor<'a>(&'a self, p: &Params, name: &str) -> Option<&'a [f64]> {
        p.layout().find(name).map(|s| &self.data[s.range()])
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
}

struct Packing {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    rows: usize,
    /// Start of each sequence's attention-probability block.
    prob_offsets: Vec<usize>,
    prob_total: usize,
}

struct Trunk {
    pack: Packing,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    /// (packed row, embedding index into `emb`)
    emb_rows: Vec<usize>,
    emb: Vec<f64>,
    sym_rows: Vec<(usize, usize)>,
}

fn pack(p: &Params, seqs: &[TokenSeq]) -> Result<Packing> {
    let cfg = &p.cfg;
    if seqs.is_empty() {
        return Err(config_err("empty batch"));
    }
    let mut offsets = Vec::with_capacity(seqs.len());
    let mut lens = Vec::with_capacity(seqs.len());
    let mut prob_offsets = Vec::with_capacity(seqs.len());
    let (mut rows, mut prob_total) = (0, 0);
    for s in seqs {
        let t = s.len();
        if t == 0 {
            return Err(config_err("empty token sequence"));
        }
        if t > cfg.max_seq {
            return Err(config_err(format!("sequence of {t} tokens exceeds max_seq {}", cfg.max_seq)));
        }
        for tok in &s.tokens {
            match tok {
                Token::Embedding(v) if v.len() != cfg.dim_in => {
                    return Err(config_err(format!("embedding of dim {} but model expects {}", v.len(), cfg.dim_in)))
                }
                Token::Symbol(id) if *id as usize >= cfg.vocab => {
                    return Err(config_err(format!("symbol {id} outside vocabulary {}", cfg.vocab)))
                }
                _ => {}
            }
        }
        offsets.push(rows);
        lens.push(t);
        prob_offsets.push(prob_total);
        rows += t;
        prob_total += cfg.n_heads * t * t;
    }
    Ok(Packing { offsets, lens, rows, prob_offsets, prob_total })
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_exact_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(x, b)| *x += b);
    }
}

fn bias_grad(dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks_exact(db.len()) {
        db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let d = g.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates gain/offset gradients and returns the input gradient.
fn layer_norm_back(dy: &[f64], c: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let mut dx = vec![0.0; dy.len()];
    for (r, &rs) in c.rstd.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        let (dyr, xh) = (&dy[span.clone()], &c.xhat[span.clone()]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            let dxh = dyr[i] * g[i];
            m1 += dxh;
            m2 += dxh * xh[i];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let dxr = &mut dx[span];
        for i in 0..d {
            dxr[i] = rs * (dyr[i] * g[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `out = x W + b` over packed rows.
fn linear(x: &[f64], w: &[f64], b: &[f64], d_in: usize) -> Vec<f64> {
    let d_out = b.len();
    let rows = x.len() / d_in;
    let mut y = vec![0.0; rows * d_out];
    mm(rows, d_in, d_out, x, w, &mut y, false);
    add_bias(&mut y, b);
    y
}

fn attention(p: &Params, pack: &Packing, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = p.cfg.d_model;
    let nh = p.cfg.n_heads;
    let hd = p.cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut att = vec![0.0; pack.rows * d];
    let mut probs = vec![0.0; pack.prob_total];
    for (s, (&o, &t)) in pack.offsets.iter().zip(&pack.lens).enumerate() {
        for h in 0..nh {
            let base = o * d + h * hd;
            let pb = pack.prob_offsets[s] + h * t * t;
            let pm = &mut probs[pb..pb + t * t];
            // scores = Q_h K_h^T
            mm_strided(t, hd, t, &q[base..], (d, 1), &k[base..], (1, d), pm, (t, 1), false);
            for i in 0..t {
                let row = &mut pm[i * t..(i + 1) * t];
                let mut mx = f64::NEG_INFINITY;
                for x in row[..=i].iter_mut() {
                    *x *= scale;
                    mx = mx.max(*x);
                }
                let mut z = 0.0;
                for x in row[..=i].iter_mut() {
                    *x = (*x - mx).exp();
                    z += *x;
                }
                row[..=i].iter_mut().for_each(|x| *x /= z);
                row[i + 1..].fill(0.0);
            }
            mm_strided(t, t, hd, pm, (t, 1), &v[base..], (d, 1), &mut att[base..], (d, 1), false);
        }
    }
    (att, probs)
}

/// Returns (dq, dk, dv).
fn attention_back(
    p: &Params,
    pack: &Packing,
    c: &LayerCache,
    datt: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = p.cfg.d_model;
    let nh = p.cfg.n_heads;
    let hd = p.cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; pack.rows * d];
    let mut dk = vec![0.0; pack.rows * d];
    let mut dv = vec![0.0; pack.rows * d];
    let max_t = pack.lens.iter().copied().max().unwrap_or(0);
    let mut ds = vec![0.0; max_t * max_t];
    for (s, (&o, &t)) in pack.offsets.iter().zip(&pack.lens).enumerate() {
        for h in 0..nh {
            let base = o * d + h * hd;
            let pb = pack.prob_offsets[s] + h * t * t;
            let pm = &c.probs[pb..pb + t * t];
            let ds = &mut ds[..t * t];
            // dP = dAtt_h V_h^T
            mm_strided(t, hd, t, &datt[base..], (d, 1), &c.v[base..], (1, d), ds, (t, 1), false);
            // dV_h = P^T dAtt_h
            mm_strided(t, t, hd, pm, (1, t), &datt[base..], (d, 1), &mut dv[base..], (d, 1), false);
            for i in 0..t {
                let pr = &pm[i * t..(i + 1) * t];
                let dr = &mut ds[i * t..(i + 1) * t];
                let dot: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                for j in 0..=i {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
                dr[i + 1..].fill(0.0);
            }
            // dQ_h = dS K_h ; dK_h = dS^T Q_h
            mm_strided(t, t, hd, ds, (t, 1), &c.k[base..], (d, 1), &mut dq[base..], (d, 1), false);
            mm_strided(t, t, hd, ds, (1, t), &c.q[base..], (d, 1), &mut dk[base..], (d, 1), false);
        }
    }
    (dq, dk, dv)
}

fn forward_trunk(p: &Params, seqs: &[TokenSeq]) -> Result<Trunk> {
    let pack = pack(p, seqs)?;
    let cfg = &p.cfg;
    let d = cfg.d_model;
    let slots = p.layout().slots(cfg.n_layers);
    let rows = pack.rows;

    let mut emb_rows = Vec::new();
    let mut emb = Vec::new();
    let mut sym_rows = Vec::new();
    for (s, &o) in seqs.iter().zip(&pack.offsets) {
        for (t, tok) in s.tokens.iter().enumerate() {
            match tok {
                Token::Embedding(v) => {
                    emb_rows.push(o + t);
                    emb.extend_from_slice(v);
                }
                Token::Symbol(id) => sym_rows.push((o + t, *id as usize)),
            }
        }
    }
    let mut x = vec![0.0; rows * d];
    let proj = linear(&emb, p.slice(slots.in_w), p.slice(slots.in_b), cfg.dim_in);
    for (i, &r) in emb_rows.iter().enumerate() {
        x[r * d..(r + 1) * d].copy_from_slice(&proj[i * d..(i + 1) * d]);
    }
    let sym = p.slice(slots.sym);
    for &(r, id) in &sym_rows {
        x[r * d..(r + 1) * d].copy_from_slice(&sym[id * d..(id + 1) * d]);
    }
    let pos = p.slice(slots.pos);
    for (&o, &t) in pack.offsets.iter().zip(&pack.lens) {
        for i in 0..t {
            let row = &mut x[(o + i) * d..(o + i + 1) * d];
            row.iter_mut().zip(&pos[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for ls in &slots.layers {
        let (h1, ln1) = layer_norm(&x, p.slice(ls.ln1_g), p.slice(ls.ln1_b));
        let q = linear(&h1, p.slice(ls.wq), p.slice(ls.bq), d);
        let k = linear(&h1, p.slice(ls.wk), p.slice(ls.bk), d);
        let v = linear(&h1, p.slice(ls.wv), p.slice(ls.bv), d);
        let (att, probs) = attention(p, &pack, &q, &k, &v);
        let o = linear(&att, p.slice(ls.wo), p.slice(ls.bo), d);
        x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        let (h2, ln2) = layer_norm(&x, p.slice(ls.ln2_g), p.slice(ls.ln2_b));
        let f1 = linear(&h2, p.slice(ls.w1), p.slice(ls.b1), d);
        let g: Vec<f64> = f1.iter().map(|&z| gelu(z)).collect();
        let f2 = linear(&g, p.slice(ls.w2), p.slice(ls.b2), cfg.d_ff);
        x.iter_mut().zip(&f2).for_each(|(a, b)| *a += b);
        layers.push(LayerCache { ln1, h1, q, k, v, probs, att, ln2, h2, f1, g });
    }
    let (hf, lnf) = layer_norm(&x, p.slice(slots.lnf_g), p.slice(slots.lnf_b));
    Ok(Trunk { pack, layers, lnf, hf, emb_rows, emb, sym_rows })
}

/// Head logits for the given packed rows, `rows.len() x vocab`.
fn head_logits(p: &Params, hf: &[f64], rows: &[usize]) -> Vec<f64> {
    let d = p.cfg.d_model;
    let slots = p.layout().slots(p.cfg.n_layers);
    let mut hsel = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        hsel.extend_from_slice(&hf[r * d..(r + 1) * d]);
    }
    linear(&hsel, p.slice(slots.head_w), p.slice(slots.head_b), d)
}

/// Logits at every position of one sequence, `len x vocab` row-major.
pub fn forward(p: &Params, seq: &TokenSeq) -> Result<Vec<f64>> {
    let trunk = forward_trunk(p, std::slice::from_ref(seq))?;
    let rows: Vec<usize> = (0..seq.len()).collect();
    Ok(head_logits(p, &trunk.hf, &rows))
}

/// Logits at the final position of each sequence.
pub fn final_logits(p: &Params, seqs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
    let trunk = forward_trunk(p, seqs)?;
    let rows: Vec<usize> = trunk.pack.offsets.iter().zip(&trunk.pack.lens).map(|(o, t)| o + t - 1).collect();
    let v = p.cfg.vocab;
    Ok(head_logits(p, &trunk.hf, &rows).chunks_exact(v).map(|c| c.to_vec()).collect())
}

/// Softmax over the whole row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

struct TargetRows {
    rows: Vec<usize>,
    symbols: Vec<usize>,
}

fn target_rows(p: &Params, seqs: &[TokenSeq], offsets: &[usize], mask: HeadMask) -> Result<TargetRows> {
    let limit = match mask {
        HeadMask::Full => p.cfg.vocab,
        HeadMask::Episodic => p.cfg.v_epi,
    };
    let mut rows = Vec::new();
    let mut symbols = Vec::new();
    for (s, &o) in seqs.iter().zip(offsets) {
        if s.targets.is_empty() {
            return Err(config_err("sequence has no target positions"));
        }
        for t in &s.targets {
            if t.position >= s.len() {
                return Err(Error::Index { index: t.position, len: s.len() });
            }
            if t.symbol as usize >= limit {
                return Err(config_err(format!("target symbol {} outside the loss vocabulary", t.symbol)));
            }
            rows.push(o + t.position);
            symbols.push(t.symbol as usize);
        }
    }
    Ok(TargetRows { rows, symbols })
}

/// Per-target `-log softmax` and, optionally, `d loss / d logits` scaled by
/// `weight`, over the masked vocabulary.
fn nll_rows(logits: &mut [f64], v: usize, limit: usize, symbols: &[usize], weight: f64) -> Vec<f64> {
    let mut losses = Vec::with_capacity(symbols.len());
    for (row, &y) in logits.chunks_exact_mut(v).zip(symbols) {
        let act = &mut row[..limit];
        let mx = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = act.iter().map(|x| (x - mx).exp()).sum();
        let lse = mx + z.ln();
        losses.push(lse - act[y]);
        for (i, x) in act.iter_mut().enumerate() {
            let prob = (*x - lse).exp();
            *x = weight * (prob - if i == y { 1.0 } else { 0.0 });
        }
        row[limit..].fill(0.0);
    }
    losses
}

fn per_sequence(seqs: &[TokenSeq], target_losses: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(seqs.len());
    let mut i = 0;
    for s in seqs {
        let n = s.targets.len();
        out.push(target_losses[i..i + n].iter().sum());
        i += n;
    }
    out
}

/// Per-sequence losses: sum over target positions of `-log p(target)`.
pub fn sequence_losses(p: &Params, seqs: &[TokenSeq], mask: HeadMask) -> Result<Vec<f64>> {
    let trunk = forward_trunk(p, seqs)?;
    let tr = target_rows(p, seqs, &trunk.pack.offsets, mask)?;
    let mut logits = head_logits(p, &trunk.hf, &tr.rows);
    let limit = if mask == HeadMask::Full { p.cfg.vocab } else { p.cfg.v_epi };
    let l = nll_rows(&mut logits, p.cfg.vocab, limit, &tr.symbols, 0.0);
    Ok(per_sequence(seqs, &l))
}

/// Mean over the batch of per-sequence losses.
pub fn lcl_loss(p: &Params, seqs: &[TokenSeq], mask: HeadMask) -> Result<f64> {
    let l = sequence_losses(p, seqs, mask)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(p: &Params, seqs: &[TokenSeq], mask: HeadMask) -> Result<(f64, Gradients)> {
    let cfg = &p.cfg;
    let d = cfg.d_model;
    let slots = p.layout().slots(cfg.n_layers);
    let specs = p.layout().specs();
    let trunk = forward_trunk(p, seqs)?;
    let tr = target_rows(p, seqs, &trunk.pack.offsets, mask)?;
    let limit = if mask == HeadMask::Full { cfg.vocab } else { cfg.v_epi };
    let batch = seqs.len() as f64;

    let mut logits = head_logits(p, &trunk.hf, &tr.rows);
    let target_losses = nll_rows(&mut logits, cfg.vocab, limit, &tr.symbols, 1.0 / batch);
    let loss = target_losses.iter().sum::<f64>() / batch;
    let dlogits = logits;

    let mut grads = Gradients::zeros_like(p);
    let g = &mut grads.data;
    let mut gslice = |idx: usize| specs[idx].range();

    // Output head.
    let nt = tr.rows.len();
    let mut hsel = Vec::with_capacity(nt * d);
    for &r in &tr.rows {
        hsel.extend_from_slice(&trunk.hf[r * d..(r + 1) * d]);
    }
    mm_tn(d, nt, cfg.vocab, &hsel, &dlogits, &mut g[gslice(slots.head_w)], true);
    bias_grad(&dlogits, &mut g[gslice(slots.head_b)]);
    let mut dsel = vec![0.0; nt * d];
    mm_nt(nt, cfg.vocab, d, &dlogits, p.slice(slots.head_w), &mut dsel, false);
    let mut dhf = vec![0.0; trunk.pack.rows * d];
    for (i, &r) in tr.rows.iter().enumerate() {
        dhf[r * d..(r + 1) * d].iter_mut().zip(&dsel[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
    }

    let mut dx = {
        let (rg, rb) = (gslice(slots.lnf_g), gslice(slots.lnf_b));
        let (dg, db) = split_two(g, rg, rb);
        layer_norm_back(&dhf, &trunk.lnf, p.slice(slots.lnf_g), dg, db)
    };

    for (ls, c) in slots.layers.iter().zip(&trunk.layers).rev() {
        dx = layer_back(p, ls, c, &trunk.pack, dx, g, &mut gslice);
    }

    // Embeddings.
    let re = trunk.emb_rows.len();
    if re > 0 {
        let mut dproj = Vec::with_capacity(re * d);
        for &r in &trunk.emb_rows {
            dproj.extend_from_slice(&dx[r * d..(r + 1) * d]);
        }
        mm_tn(cfg.dim_in, re, d, &trunk.emb, &dproj, &mut g[gslice(slots.in_w)], true);
        bias_grad(&dproj, &mut g[gslice(slots.in_b)]);
    }
    let sym = gslice(slots.sym);
    for &(r, id) in &trunk.sym_rows {
        let dst = &mut g[sym.start + id * d..sym.start + (id + 1) * d];
        dst.iter_mut().zip(&dx[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
    }
    let pos = gslice(slots.pos);
    for (&o, &t) in trunk.pack.offsets.iter().zip(&trunk.pack.lens) {
        for i in 0..t {
            let dst = &mut g[pos.start + i * d..pos.start + (i + 1) * d];
            dst.iter_mut().zip(&dx[(o + i) * d..(o + i + 1) * d]).for_each(|(a, b)| *a += b);
        }
    }
    Ok((loss, grads))
}

fn split_two(
    g: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Backward through one block; `dx` is the gradient at the block output.
fn layer_back(
    p: &Params,
    ls: &LayerSlots,
    c: &LayerCache,
    pack: &Packing,
    dx: Vec<f64>,
    g: &mut [f64],
    r: &mut impl FnMut(usize) -> std::ops::Range<usize>,
) -> Vec<f64> {
    let d = p.cfg.d_model;
    let f = p.cfg.d_ff;
    let rows = pack.rows;

    // Feed-forward branch.
    mm_tn(f, rows, d, &c.g, &dx, &mut g[r(ls.w2)], true);
    bias_grad(&dx, &mut g[r(ls.b2)]);
    let mut df1 = vec![0.0; rows * f];
    mm_nt(rows, d, f, &dx, p.slice(ls.w2), &mut df1, false);
    df1.iter_mut().zip(&c.f1).for_each(|(g, &z)| *g *= gelu_grad(z));
    mm_tn(d, rows, f, &c.h2, &df1, &mut g[r(ls.w1)], true);
    bias_grad(&df1, &mut g[r(ls.b1)]);
    let mut dh2 = vec![0.0; rows * d];
    mm_nt(rows, f, d, &df1, p.slice(ls.w1), &mut dh2, false);
    let dln2 = {
        let (dg, db) = split_two(g, r(ls.ln2_g), r(ls.ln2_b));
        layer_norm_back(&dh2, &c.ln2, p.slice(ls.ln2_g), dg, db)
    };
    let mut dmid = dx;
    dmid.iter_mut().zip(&dln2).for_each(|(a, b)| *a += b);

    // Attention branch.
    mm_tn(d, rows, d, &c.att, &dmid, &mut g[r(ls.wo)], true);
    bias_grad(&dmid, &mut g[r(ls.bo)]);
    let mut datt = vec![0.0; rows * d];
    mm_nt(rows, d, d, &dmid, p.slice(ls.wo), &mut datt, false);
    let (dq, dk, dv) = attention_back(p, pack, c, &datt);
    let mut dh1 = vec![0.0; rows * d];
    for (dy, w, b) in [(&dq, ls.wq, ls.bq), (&dk, ls.wk, ls.bk), (&dv, ls.wv, ls.bv)] {
        mm_tn(d, rows, d, &c.h1, dy, &mut g[r(w)], true);
        bias_grad(dy, &mut g[r(b)]);
        mm_nt(rows, d, d, dy, p.slice(w), &mut dh1, true);
    }
    let dln1 = {
        let (dg, db) = split_two(g, r(ls.ln1_g), r(ls.ln1_b));
        layer_norm_back(&dh1, &c.ln1, p.slice(ls.ln1_g), dg, db)
    };
    dmid.iter_mut().zip(&dln1).for_each(|(a, b)| *a += b);
    dmid
}
