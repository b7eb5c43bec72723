//! The synthetic class universe: unit-norm prototype clusters standing in
//! for image and text features, plus the binary import/export format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{config_err, Error, Result};
use crate::rng::StreamRng;
use crate::vecmath::{norm, normalize_in_place, normalized};

pub const UNIVERSE_MAGIC: &[u8; 4] = b"LCLU";
pub const UNIVERSE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A unit-norm vector of the universe dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`; fails on the zero vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !(norm(&values) > 0.0) {
            return Err(config_err("embedding must have non-zero finite norm"));
        }
        Ok(Embedding(normalized(values)))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub proto_img: Vec<f64>,
    pub proto_txt: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniverseParams {
    pub seed: u64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub dim: usize,
    pub sigma_img: f64,
    pub sigma_txt: f64,
}

impl Default for UniverseParams {
    fn default() -> Self {
        UniverseParams {
            seed: 7,
            n_train: 900,
            n_holdout: 100,
            dim: 64,
            sigma_img: 0.15,
            sigma_txt: 0.10,
        }
    }
}

/// Immutable after construction. The first `n_train` class ids form the
/// train split, the rest the holdout split.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassUniverse {
    dim: usize,
    classes: Vec<ClassSpec>,
    sigma_img: f64,
    seed: u64,
    n_train: usize,
}

impl ClassUniverse {
    pub fn create(p: &UniverseParams) -> Result<Self> {
        if p.n_train < 2 || p.n_holdout < 2 {
            return Err(config_err(format!(
                "need at least 2 train and 2 holdout classes, got {}/{}",
                p.n_train, p.n_holdout
            )));
        }
        if p.dim < 2 {
            return Err(config_err(format!("dim must be >= 2, got {}", p.dim)));
        }
        if !(p.sigma_img >= 0.0 && p.sigma_txt >= 0.0) || !p.sigma_img.is_finite() || !p.sigma_txt.is_finite() {
            return Err(config_err("noise scales must be finite and non-negative"));
        }
        let total = p.n_train + p.n_holdout;
        if total > u32::MAX as usize {
            return Err(config_err("too many classes"));
        }
        let root = StreamRng::new(p.seed).derive("universe", 0);
        let classes = (0..total)
            .map(|c| {
                let mut rng = root.derive("class", c as u64);
                let img = loop {
                    let v: Vec<f64> = (0..p.dim).map(|_| rng.gaussian()).collect();
                    if norm(&v) > 1e-12 {
                        break normalized(v);
                    }
                };
                let proto_txt = if p.sigma_txt == 0.0 {
                    img.clone()
                } else {
                    normalized(img.iter().map(|x| x + p.sigma_txt * rng.gaussian()).collect())
                };
                ClassSpec { proto_img: img, proto_txt }
            })
            .collect();
        Ok(ClassUniverse {
            dim: p.dim,
            classes,
            sigma_img: p.sigma_img,
            seed: p.seed,
            n_train: p.n_train,
        })
    }

    /// Builds a universe from explicit prototypes (renormalized).
    pub fn from_classes(mut classes: Vec<ClassSpec>, sigma_img: f64, n_train: usize) -> Result<Self> {
        let dim = classes.first().map(|c| c.proto_img.len()).unwrap_or(0);
        if classes.len() < 2 || dim == 0 {
            return Err(config_err("universe needs at least 2 classes of positive dimension"));
        }
        if n_train == 0 || n_train >= classes.len() {
            return Err(config_err(format!(
                "train split size {n_train} must be in [1, {})",
                classes.len()
            )));
        }
        for c in classes.iter_mut() {
            if c.proto_img.len() != dim || c.proto_txt.len() != dim {
                return Err(config_err("prototype dimension mismatch"));
            }
            renormalize(&mut c.proto_img)?;
            renormalize(&mut c.proto_txt)?;
        }
        Ok(ClassUniverse { dim, classes, sigma_img, seed: 0, n_train })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_img(&self) -> f64 {
        self.sigma_img
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_holdout(&self) -> usize {
        self.classes.len() - self.n_train
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> Result<&ClassSpec> {
        self.classes
            .get(id.index())
            .ok_or_else(|| Error::Lookup(format!("class {id} not in universe of {}", self.classes.len())))
    }

    pub fn split_of(&self, id: ClassId) -> Result<Split> {
        self.class(id)?;
        Ok(if id.index() < self.n_train { Split::Train } else { Split::Holdout })
    }

    pub fn train_ids(&self) -> Vec<ClassId> {
        (0..self.n_train as u32).map(ClassId).collect()
    }

    pub fn holdout_ids(&self) -> Vec<ClassId> {
        (self.n_train as u32..self.classes.len() as u32).map(ClassId).collect()
    }

    pub fn ids(&self, split: Split) -> Vec<ClassId> {
        match split {
            Split::Train => self.train_ids(),
            Split::Holdout => self.holdout_ids(),
        }
    }

    /// One noisy view of a class: `normalize(proto_img + sigma_img * eta)`.
    pub fn draw_sample(&self, id: ClassId, rng: &mut StreamRng) -> Result<Embedding> {
        let proto = &self.class(id)?.proto_img;
        if self.sigma_img == 0.0 {
            return Ok(Embedding(proto.clone()));
        }
        loop {
            let v: Vec<f64> = proto.iter().map(|x| x + self.sigma_img * rng.gaussian()).collect();
            if norm(&v) > 1e-12 {
                return Ok(Embedding(normalized(v)));
            }
        }
    }

    /// Normalized mean of `n_samples` draws.
    pub fn class_mean_feature(&self, id: ClassId, n_samples: usize, rng: &mut StreamRng) -> Result<Embedding> {
        if n_samples == 0 {
            return Err(config_err("class_mean_feature needs n_samples >= 1"));
        }
        if self.sigma_img == 0.0 {
            return Ok(Embedding(self.class(id)?.proto_img.clone()));
        }
        let mut acc = vec![0.0; self.dim];
        for _ in 0..n_samples {
            let s = self.draw_sample(id, rng)?;
            acc.iter_mut().zip(s.values()).for_each(|(a, x)| *a += x);
        }
        if n_samples == 1 {
            return Ok(Embedding(acc));
        }
        Embedding::new(acc)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(UNIVERSE_MAGIC)?;
        w.write_all(&UNIVERSE_VERSION.to_le_bytes())?;
        w.write_all(&(self.classes.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.sigma_img.to_le_bytes())?;
        for c in &self.classes {
            for x in c.proto_img.iter().chain(&c.proto_txt) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + self.classes.len() * self.dim * 16);
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Parses the binary format. The split is not stored in the file: the
    /// caller supplies `n_train`, or the default (90 % train, rounded, at
    /// least one class on each side) is used.
    pub fn read_from(bytes: &[u8], n_train: Option<usize>) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != UNIVERSE_MAGIC {
            return Err(Error::Parse { offset: 0, msg: "bad magic, expected LCLU".into() });
        }
        let version = cur.u32("version")?;
        if version != UNIVERSE_VERSION {
            return Err(Error::Parse { offset: 4, msg: format!("unsupported version {version}") });
        }
        let n_classes = cur.u32("n_classes")? as usize;
        let dim = cur.u32("dim")? as usize;
        let sigma_img = cur.f64("sigma_img")?;
        if n_classes < 2 || dim == 0 {
            return Err(Error::Parse {
                offset: 8,
                msg: format!("header declares {n_classes} classes of dim {dim}"),
            });
        }
        if !(sigma_img >= 0.0) || !sigma_img.is_finite() {
            return Err(Error::Parse { offset: 16, msg: format!("invalid sigma_img {sigma_img}") });
        }
        let expected = 24u64 + (n_classes as u64) * (dim as u64) * 16;
        if (bytes.len() as u64) != expected {
            return Err(Error::Parse {
                offset: bytes.len().min(expected as usize) as u64,
                msg: format!("file has {} bytes, header implies {expected}", bytes.len()),
            });
        }
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let proto_img = cur.f64s(dim, "proto_img")?;
            let proto_txt = cur.f64s(dim, "proto_txt")?;
            classes.push(ClassSpec { proto_img, proto_txt });
        }
        let n_train = n_train.unwrap_or_else(|| default_train_size(n_classes));
        Self::from_classes(classes, sigma_img, n_train).map_err(|e| Error::Parse { offset: 24, msg: e.to_string() })
    }

    pub fn import(path: &Path, n_train: Option<usize>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Missing { path: path.to_path_buf(), msg: e.to_string() })?
            .read_to_end(&mut bytes)?;
        Self::read_from(&bytes, n_train)
    }
}

pub fn default_train_size(n_classes: usize) -> usize {
    ((n_classes as f64 * 0.9).round() as usize).clamp(1, n_classes.saturating_sub(1).max(1))
}

fn renormalize(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(config_err("prototype has zero or non-finite norm"));
    }
    // Already-unit vectors are kept as-is so export/import stays bit-exact.
    if (n - 1.0).abs() > 1e-12 {
        normalize_in_place(v);
    }
    Ok(())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!("unexpected end of file reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}
