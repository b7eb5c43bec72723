//! Two-way link-context episodes: label binding, support/query assembly,
//! shot-count strategies, label corruption and token serialization.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;

use crate::error::{config_err, Error, Result};
use crate::net::tokens::{Target, Token, TokenSeq};
use crate::rng::StreamRng;
use crate::universe::{ClassId, ClassUniverse, Embedding, UNIVERSE_MAGIC, UNIVERSE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelSymbol {
    /// Throwaway per-episode label, index in `[0, v_epi)`.
    Episodic(u32),
    /// Persistent label of a train class, indexed by class id.
    Global(u32),
}

/// Label vocabulary: episodic symbols occupy token ids `[0, v_epi)`, global
/// symbols `[v_epi, v_epi + n_global)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub v_epi: usize,
    pub n_global: usize,
}

impl Vocab {
    pub fn total(&self) -> usize {
        self.v_epi + self.n_global
    }

    pub fn token_id(&self, s: LabelSymbol) -> Result<u32> {
        match s {
            LabelSymbol::Episodic(i) if (i as usize) < self.v_epi => Ok(i),
            LabelSymbol::Global(c) if (c as usize) < self.n_global => Ok(self.v_epi as u32 + c),
            _ => Err(Error::Lookup(format!("symbol {s:?} outside vocabulary {self:?}"))),
        }
    }

    pub fn symbol(&self, id: u32) -> Result<LabelSymbol> {
        let i = id as usize;
        if i < self.v_epi {
            Ok(LabelSymbol::Episodic(id))
        } else if i < self.total() {
            Ok(LabelSymbol::Global(id - self.v_epi as u32))
        } else {
            Err(Error::Lookup(format!("token id {id} outside vocabulary of {}", self.total())))
        }
    }

    pub fn global_for(&self, class: ClassId) -> Result<LabelSymbol> {
        let s = LabelSymbol::Global(class.0);
        self.token_id(s)?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelBinding {
    pub pos: (ClassId, LabelSymbol),
    pub neg: (ClassId, LabelSymbol),
}

impl LabelBinding {
    pub fn symbol_for(&self, class: ClassId) -> Result<LabelSymbol> {
        if class == self.pos.0 {
            Ok(self.pos.1)
        } else if class == self.neg.0 {
            Ok(self.neg.1)
        } else {
            Err(Error::Lookup(format!("class {class} is not bound in this episode")))
        }
    }

    pub fn candidates(&self) -> [LabelSymbol; 2] {
        [self.pos.1, self.neg.1]
    }

    /// The other candidate symbol.
    pub fn swap(&self, s: LabelSymbol) -> LabelSymbol {
        if s == self.pos.1 {
            self.neg.1
        } else {
            self.pos.1
        }
    }
}

pub fn bind_labels(pos: ClassId, neg: ClassId, v_epi: usize, rng: &mut StreamRng) -> Result<LabelBinding> {
    if v_epi < 2 {
        return Err(config_err(format!("need at least 2 episodic symbols, got {v_epi}")));
    }
    if pos == neg {
        return Err(config_err(format!("positive and negative class are both {pos}")));
    }
    let picked = sample_indices(rng, v_epi, 2);
    let (a, b) = (picked.index(0) as u32, picked.index(1) as u32);
    Ok(LabelBinding { pos: (pos, LabelSymbol::Episodic(a)), neg: (neg, LabelSymbol::Episodic(b)) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShotStrategy {
    Fixed(usize),
    Uniform { lo: usize, hi: usize },
    Weighted { lo: usize, hi: usize },
}

impl ShotStrategy {
    pub const UNIFORM_2_16: ShotStrategy = ShotStrategy::Uniform { lo: 2, hi: 16 };
    pub const WEIGHTED_2_16: ShotStrategy = ShotStrategy::Weighted { lo: 2, hi: 16 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShotStrategy::Fixed(n) if n >= 1 => Ok(()),
            ShotStrategy::Uniform { lo, hi } | ShotStrategy::Weighted { lo, hi } if 2 <= lo && lo <= hi => Ok(()),
            s => Err(config_err(format!("invalid shot strategy {s:?}"))),
        }
    }

    pub fn max_shots(&self) -> usize {
        match *self {
            ShotStrategy::Fixed(n) => n,
            ShotStrategy::Uniform { hi, .. } | ShotStrategy::Weighted { hi, .. } => hi,
        }
    }

    /// Probability of drawing `n` shots.
    pub fn probability(&self, n: usize) -> f64 {
        match *self {
            ShotStrategy::Fixed(k) => f64::from(u8::from(n == k)),
            ShotStrategy::Uniform { lo, hi } => {
                if (lo..=hi).contains(&n) {
                    1.0 / (hi - lo + 1) as f64
                } else {
                    0.0
                }
            }
            ShotStrategy::Weighted { lo, hi } => {
                if !(lo..=hi).contains(&n) {
                    return 0.0;
                }
                // e^j / sum e^m, shifted by e^-hi for range safety.
                let z: f64 = (lo..=hi).map(|m| (m as f64 - hi as f64).exp()).sum();
                (n as f64 - hi as f64).exp() / z
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> usize {
        match *self {
            ShotStrategy::Fixed(n) => n,
            ShotStrategy::Uniform { lo, hi } => lo + rng.below(hi - lo + 1),
            ShotStrategy::Weighted { lo, hi } => {
                let mut u = rng.unit();
                for n in lo..hi {
                    let p = self.probability(n);
                    if u < p {
                        return n;
                    }
                    u -= p;
                }
                hi
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportPair {
    pub embedding: Embedding,
    pub symbol: LabelSymbol,
    pub source_class: ClassId,
    pub corrupted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<SupportPair>,
    pub query_embedding: Embedding,
    pub query_class: ClassId,
    pub true_symbol: LabelSymbol,
    pub binding: LabelBinding,
}

impl Episode {
    pub fn candidates(&self) -> [LabelSymbol; 2] {
        self.binding.candidates()
    }

    pub fn shots_per_class(&self) -> usize {
        self.support.len() / 2
    }
}

pub fn build_2way_episode(
    universe: &ClassUniverse,
    pos: ClassId,
    neg: ClassId,
    n_shots: usize,
    binding: LabelBinding,
    rng: &mut StreamRng,
) -> Result<Episode> {
    if n_shots == 0 {
        return Err(config_err("2-way episode needs at least one shot per class"));
    }
    if pos == neg {
        return Err(config_err(format!("positive and negative class are both {pos}")));
    }
    universe.class(pos)?;
    universe.class(neg)?;
    if binding.pos.0 != pos || binding.neg.0 != neg {
        return Err(config_err("binding does not match the episode classes"));
    }
    let mut support = Vec::with_capacity(2 * n_shots);
    for (class, symbol) in [binding.pos, binding.neg] {
        for _ in 0..n_shots {
            support.push(SupportPair {
                embedding: universe.draw_sample(class, rng)?,
                symbol,
                source_class: class,
                corrupted: false,
            });
        }
    }
    support.shuffle(rng);
    let query_class = if rng.coin() { pos } else { neg };
    let query_embedding = universe.draw_sample(query_class, rng)?;
    Ok(Episode {
        support,
        query_embedding,
        query_class,
        true_symbol: binding.symbol_for(query_class)?,
        binding,
    })
}

fn flip(e: &mut Episode, k: usize) {
    let binding = e.binding;
    let pair = &mut e.support[k];
    pair.symbol = binding.swap(pair.symbol);
    pair.corrupted = binding.symbol_for(pair.source_class).map(|s| s != pair.symbol).unwrap_or(true);
}

/// Swaps the labels of `round(false_rate * |support|)` support pairs chosen
/// uniformly without replacement. The query is untouched.
pub fn corrupt_labels(e: &Episode, false_rate: f64, rng: &mut StreamRng) -> Result<Episode> {
    if !(0.0..=1.0).contains(&false_rate) {
        return Err(config_err(format!("false rate {false_rate} outside [0, 1]")));
    }
    let n = e.support.len();
    let k = ((false_rate * n as f64).round() as usize).min(n);
    let mut out = e.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut picked = sample_indices(rng, n, k).into_vec();
    picked.sort_unstable();
    for i in picked {
        flip(&mut out, i);
    }
    Ok(out)
}

/// Swaps the label of support pair `k` only.
pub fn perturb_position(e: &Episode, k: usize) -> Result<Episode> {
    if k >= e.support.len() {
        return Err(Error::Index { index: k, len: e.support.len() });
    }
    let mut out = e.clone();
    flip(&mut out, k);
    Ok(out)
}

/// Layout `[E1 L1 E2 L2 ... E2n L2n Eq]`; the only target is the query
/// position unless `supervise_support` adds each `E_i -> L_i` step.
pub fn episode_to_tokens(
    e: &Episode,
    vocab: &Vocab,
    max_seq: usize,
    supervise_support: bool,
) -> Result<TokenSeq> {
    let len = 2 * e.support.len() + 1;
    if len > max_seq {
        return Err(config_err(format!("episode needs {len} tokens but max_seq is {max_seq}")));
    }
    let mut tokens = Vec::with_capacity(len);
    let mut targets = Vec::new();
    for p in &e.support {
        let id = vocab.token_id(p.symbol)?;
        if supervise_support {
            targets.push(Target { position: tokens.len(), symbol: id });
        }
        tokens.push(Token::Embedding(p.embedding.values().to_vec()));
        tokens.push(Token::Symbol(id));
    }
    targets.push(Target { position: tokens.len(), symbol: vocab.token_id(e.true_symbol)? });
    tokens.push(Token::Embedding(e.query_embedding.values().to_vec()));
    Ok(TokenSeq { tokens, targets })
}

/// A no-support item on a train class, answered with its global symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotItem {
    pub embedding: Embedding,
    pub class: ClassId,
    pub symbol: LabelSymbol,
}

pub fn build_zero_shot(
    universe: &ClassUniverse,
    class: ClassId,
    vocab: &Vocab,
    rng: &mut StreamRng,
) -> Result<ZeroShotItem> {
    let symbol = vocab.global_for(class)?;
    Ok(ZeroShotItem { embedding: universe.draw_sample(class, rng)?, class, symbol })
}

pub fn zero_shot_to_tokens(item: &ZeroShotItem, vocab: &Vocab) -> Result<TokenSeq> {
    Ok(TokenSeq {
        tokens: vec![Token::Embedding(item.embedding.values().to_vec())],
        targets: vec![Target { position: 0, symbol: vocab.token_id(item.symbol)? }],
    })
}

/// Support pairs and query recovered from a serialized episode.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedEpisode {
    pub pairs: Vec<(Vec<f64>, u32)>,
    pub query: Vec<f64>,
}

pub fn decode_tokens(seq: &TokenSeq) -> Result<DecodedEpisode> {
    let t = &seq.tokens;
    if t.len() % 2 != 1 {
        return Err(config_err(format!("episode sequences have odd length, got {}", t.len())));
    }
    let mut pairs = Vec::with_capacity(t.len() / 2);
    for ch in t[..t.len() - 1].chunks_exact(2) {
        match (&ch[0], &ch[1]) {
            (Token::Embedding(v), Token::Symbol(s)) => pairs.push((v.clone(), *s)),
            _ => return Err(config_err("expected embedding/symbol pair")),
        }
    }
    match t.last() {
        Some(Token::Embedding(q)) => Ok(DecodedEpisode { pairs, query: q.clone() }),
        _ => Err(config_err("sequence must end with the query embedding")),
    }
}

/// Episode manifest for evaluating external models: a CSV index plus the
/// embeddings in the universe binary layout, one record per manifest row
/// (the same vector stored in both prototype slots).
pub fn export_manifest(episodes: &[Episode], vocab: &Vocab) -> Result<(String, Vec<u8>)> {
    let mut csv = String::from("episode_id,role,position,class_id,symbol_id,corrupted\n");
    let mut vectors: Vec<&[f64]> = Vec::new();
    for (id, e) in episodes.iter().enumerate() {
        for (pos, p) in e.support.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{id},support,{pos},{},{},{}",
                p.source_class,
                vocab.token_id(p.symbol)?,
                u8::from(p.corrupted)
            );
            vectors.push(p.embedding.values());
        }
        let _ = writeln!(
            csv,
            "{id},query,{},{},{},0",
            e.support.len(),
            e.query_class,
            vocab.token_id(e.true_symbol)?
        );
        vectors.push(e.query_embedding.values());
    }
    let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
    let mut bin = Vec::with_capacity(24 + vectors.len() * dim * 16);
    bin.extend_from_slice(UNIVERSE_MAGIC);
    bin.extend_from_slice(&UNIVERSE_VERSION.to_le_bytes());
    bin.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    bin.extend_from_slice(&(dim as u32).to_le_bytes());
    bin.extend_from_slice(&0f64.to_le_bytes());
    for v in vectors {
        for _ in 0..2 {
            v.iter().for_each(|x| bin.extend_from_slice(&x.to_le_bytes()));
        }
    }
    Ok((csv, bin))
}
