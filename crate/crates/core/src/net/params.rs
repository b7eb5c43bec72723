//! Flat parameter storage with a named tensor layout.

use std::ops::Range;

use crate::error::Result;
use crate::net::config::ModelConfig;
use crate::rng::StreamRng;

pub const INIT_SCALE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Tensor indices of one transformer block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Slots {
    pub in_w: usize,
    pub in_b: usize,
    pub sym: usize,
    pub pos: usize,
    pub layers: Vec<LayerSlots>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab);
        let mut specs: Vec<TensorSpec> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            let offset = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
            specs.push(TensorSpec { name, shape, offset, init });
        };
        add("input.w".into(), vec![cfg.dim_in, d], Init::Normal);
        add("input.b".into(), vec![d], Init::Zeros);
        add("symbol_emb".into(), vec![v, d], Init::Normal);
        add("pos_emb".into(), vec![cfg.max_seq, d], Init::Normal);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            add(p("ln1.g"), vec![d], Init::Ones);
            add(p("ln1.b"), vec![d], Init::Zeros);
            for m in ["q", "k", "v", "o"] {
                add(p(&format!("attn.w{m}")), vec![d, d], Init::Normal);
                add(p(&format!("attn.b{m}")), vec![d], Init::Zeros);
            }
            add(p("ln2.g"), vec![d], Init::Ones);
            add(p("ln2.b"), vec![d], Init::Zeros);
            add(p("ff.w1"), vec![d, f], Init::Normal);
            add(p("ff.b1"), vec![f], Init::Zeros);
            add(p("ff.w2"), vec![f, d], Init::Normal);
            add(p("ff.b2"), vec![d], Init::Zeros);
        }
        add("final_ln.g".into(), vec![d], Init::Ones);
        add("final_ln.b".into(), vec![d], Init::Zeros);
        add("head.w".into(), vec![d, v], Init::Zeros);
        add("head.b".into(), vec![v], Init::Zeros);
        let total = specs.last().map(|s| s.offset + s.len()).unwrap_or(0);
        Layout { specs, total }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub(crate) fn slots(&self, n_layers: usize) -> Slots {
        const PER_LAYER: usize = 16;
        let layers = (0..n_layers)
            .map(|l| {
                let b = 4 + l * PER_LAYER;
                LayerSlots {
                    ln1_g: b,
                    ln1_b: b + 1,
                    wq: b + 2,
                    bq: b + 3,
                    wk: b + 4,
                    bk: b + 5,
                    wv: b + 6,
                    bv: b + 7,
                    wo: b + 8,
                    bo: b + 9,
                    ln2_g: b + 10,
                    ln2_b: b + 11,
                    w1: b + 12,
                    b1: b + 13,
                    w2: b + 14,
                    b2: b + 15,
                }
            })
            .collect();
        let t = 4 + n_layers * PER_LAYER;
        Slots { in_w: 0, in_b: 1, sym: 2, pos: 3, layers, lnf_g: t, lnf_b: t + 1, head_w: t + 2, head_b: t + 3 }
    }
}

/// All model weights in one contiguous buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub cfg: ModelConfig,
    layout: Layout,
    pub data: Vec<f64>,
}

impl Params {
    /// Gaussian(0, 0.02) for projections and tables, zero biases, unit
    /// norm gains, zero output head.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut data = vec![0.0; layout.total()];
        let root = StreamRng::new(seed).derive("init", 0);
        for (i, spec) in layout.specs().iter().enumerate() {
            let slice = &mut data[spec.range()];
            match spec.init {
                Init::Zeros => {}
                Init::Ones => slice.fill(1.0),
                Init::Normal => {
                    let mut rng = root.derive("tensor", i as u64);
                    slice.iter_mut().for_each(|x| *x = INIT_SCALE * rng.gaussian());
                }
            }
        }
        Ok(Params { cfg: *cfg, layout, data })
    }

    pub fn from_parts(cfg: ModelConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total() {
            return Err(crate::error::Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Params { cfg, layout, data })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.find(name)?.range();
        Some(&mut self.data[r])
    }

    pub(crate) fn slice(&self, idx: usize) -> &[f64] {
        &self.data[self.layout.specs[idx].range()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
