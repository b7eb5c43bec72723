//! Weighted class-pair similarity and per-class neighbor sets used for
//! hard-negative mining.

use std::fmt::Write as _;

use crate::error::{config_err, Error, Result};
use crate::rng::StreamRng;
use crate::universe::{ClassId, ClassUniverse};
use crate::vecmath::dot;

/// Number of draws averaged into a class image feature.
pub const CLASS_FEATURE_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityWeights {
    pub w_ii: f64,
    pub w_it: f64,
    pub w_tt: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { w_ii: 1.0 / 3.0, w_it: 1.0 / 3.0, w_tt: 1.0 / 3.0 }
    }
}

impl SimilarityWeights {
    pub fn new(w_ii: f64, w_it: f64, w_tt: f64) -> Result<Self> {
        let w = SimilarityWeights { w_ii, w_it, w_tt };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_ii, self.w_it, self.w_tt];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(config_err(format!("similarity weights must be non-negative: {ws:?}")));
        }
        let s: f64 = ws.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(config_err(format!("similarity weights must sum to 1, got {s}")));
        }
        Ok(())
    }
}

/// Per-class image and text feature used for similarity. Both unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassFeatures {
    pub img: Vec<f64>,
    pub txt: Vec<f64>,
}

pub fn class_similarity(a: &ClassFeatures, b: &ClassFeatures, w: &SimilarityWeights) -> Result<f64> {
    w.validate()?;
    let ii = dot(&a.img, &b.img);
    let it = 0.5 * (dot(&a.img, &b.txt) + dot(&a.txt, &b.img));
    let tt = dot(&a.txt, &b.txt);
    Ok((w.w_ii * ii + w.w_it * it + w.w_tt * tt).clamp(-1.0, 1.0))
}

/// Image feature = normalized mean of [`CLASS_FEATURE_SAMPLES`] draws, one
/// stream per class so the result does not depend on evaluation order.
pub fn class_features(universe: &ClassUniverse, rng: &StreamRng) -> Result<Vec<ClassFeatures>> {
    (0..universe.n_classes() as u32)
        .map(|c| {
            let id = ClassId(c);
            let mut r = rng.derive("class-feature", c as u64);
            let img = universe.class_mean_feature(id, CLASS_FEATURE_SAMPLES, &mut r)?;
            Ok(ClassFeatures { img: img.values().to_vec(), txt: universe.class(id)?.proto_txt.clone() })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub class: ClassId,
    pub similarity: f64,
}

/// Ordered neighbors of `owner`; index 0 holds rank 1 (most similar interval).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub owner: ClassId,
    pub members: Vec<Neighbor>,
}

/// Sizes of `n` contiguous intervals covering `count` items, larger first.
pub fn interval_sizes(count: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let (q, r) = (count / n, count % n);
    (0..n).map(|i| q + usize::from(i < r)).collect()
}

pub fn build_neighbor_set(
    features: &[ClassFeatures],
    owner: ClassId,
    n: usize,
    w: &SimilarityWeights,
    rng: &mut StreamRng,
    restrict_to: &[ClassId],
) -> Result<NeighborSet> {
    w.validate()?;
    let own = features
        .get(owner.index())
        .ok_or_else(|| Error::Lookup(format!("class {owner} has no features")))?;
    let mut cands = Vec::with_capacity(restrict_to.len());
    for &c in restrict_to {
        if c == owner {
            continue;
        }
        let f = features.get(c.index()).ok_or_else(|| Error::Lookup(format!("class {c} has no features")))?;
        cands.push(Neighbor { class: c, similarity: class_similarity(own, f, w)? });
    }
    cands.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.class.cmp(&b.class)));
    cands.dedup_by_key(|c| c.class);
    if n == 0 || cands.len() < n {
        return Err(config_err(format!(
            "class {owner}: need {n} neighbor intervals but only {} candidates",
            cands.len()
        )));
    }
    let mut members = Vec::with_capacity(n);
    let mut start = 0;
    for size in interval_sizes(cands.len(), n) {
        let pick = start + rng.below(size);
        members.push(cands[pick].clone());
        start += size;
    }
    Ok(NeighborSet { owner, members })
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Returns the sampled class and its 1-based rank. Rank `j` of `N` is
    /// drawn with probability `(N + 1 - j) / (N (N + 1) / 2)`.
    pub fn sample_hard_negative(&self, rng: &mut StreamRng) -> Result<(ClassId, usize)> {
        let n = self.members.len();
        if n == 0 {
            return Err(config_err(format!("neighbor set of class {} is empty", self.owner)));
        }
        let total = n * (n + 1) / 2;
        let mut r = rng.below(total);
        for j in 1..=n {
            let weight = n + 1 - j;
            if r < weight {
                return Ok((self.members[j - 1].class, j));
            }
            r -= weight;
        }
        unreachable!("cumulative weights cover total")
    }
}

/// Exact probability of rank `j` (1-based) among `n`.
pub fn hard_negative_probability(j: usize, n: usize) -> f64 {
    if j == 0 || j > n {
        return 0.0;
    }
    (n + 1 - j) as f64 / (n * (n + 1) / 2) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborConfig {
    pub n_train: usize,
    pub weights: SimilarityWeights,
    pub seed: u64,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        NeighborConfig { n_train: 100, weights: SimilarityWeights::default(), seed: 7 }
    }
}

/// Neighbor sets for every class, each restricted to its own split.
/// Train classes get `n_train` interval draws; holdout classes get the full
/// sorted holdout list so rank 1 is the single most similar holdout class.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    sets: Vec<NeighborSet>,
}

impl NeighborTable {
    pub fn build(universe: &ClassUniverse, cfg: &NeighborConfig) -> Result<Self> {
        let root = StreamRng::new(cfg.seed).derive("neighbors", 0);
        let features = class_features(universe, &root.derive("features", 0))?;
        let train = universe.train_ids();
        let holdout = universe.holdout_ids();
        let mut sets = Vec::with_capacity(universe.n_classes());
        for c in 0..universe.n_classes() as u32 {
            let id = ClassId(c);
            let mut rng = root.derive("intervals", c as u64);
            let set = if (c as usize) < universe.n_train() {
                build_neighbor_set(&features, id, cfg.n_train, &cfg.weights, &mut rng, &train)?
            } else {
                build_neighbor_set(&features, id, holdout.len() - 1, &cfg.weights, &mut rng, &holdout)?
            };
            sets.push(set);
        }
        Ok(NeighborTable { sets })
    }

    pub fn get(&self, id: ClassId) -> Result<&NeighborSet> {
        self.sets.get(id.index()).ok_or_else(|| Error::Lookup(format!("no neighbor set for class {id}")))
    }

    pub fn sets(&self) -> &[NeighborSet] {
        &self.sets
    }

    /// CSV body (header row + one row per member), 6-decimal similarities.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("owner_id,rank,member_id,similarity\n");
        for s in &self.sets {
            for (r, m) in s.members.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{:.6}", s.owner, r + 1, m.class, m.similarity);
            }
        }
        out
    }

    /// Parses [`NeighborTable::to_csv`] output; `#` comment lines are skipped.
    pub fn from_csv(text: &str, n_classes: usize) -> Result<Self> {
        let mut sets: Vec<NeighborSet> =
            (0..n_classes as u32).map(|c| NeighborSet { owner: ClassId(c), members: Vec::new() }).collect();
        let mut offset = 0u64;
        let mut seen_header = false;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let l = line.trim_end();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if !seen_header {
                if l != "owner_id,rank,member_id,similarity" {
                    return Err(Error::Parse { offset: here, msg: format!("unexpected header {l:?}") });
                }
                seen_header = true;
                continue;
            }
            let bad = |msg: &str| Error::Parse { offset: here, msg: format!("{msg}: {l:?}") };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let owner: usize = f[0].parse().map_err(|_| bad("owner_id"))?;
            let rank: usize = f[1].parse().map_err(|_| bad("rank"))?;
            let member: u32 = f[2].parse().map_err(|_| bad("member_id"))?;
            let similarity: f64 = f[3].parse().map_err(|_| bad("similarity"))?;
            let set = sets.get_mut(owner).ok_or_else(|| bad("owner out of range"))?;
            if rank != set.members.len() + 1 {
                return Err(bad("ranks must be consecutive"));
            }
            set.members.push(Neighbor { class: ClassId(member), similarity });
        }
        if !seen_header {
            return Err(Error::Parse { offset, msg: "missing header".into() });
        }
        Ok(NeighborTable { sets })
    }
}
