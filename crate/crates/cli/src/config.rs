//! Run configuration: one TOML file with a table per pipeline component.
//!
//! Every key has a default, so a file only lists what it changes. Keys are
//! checked against the default tree before deserialization, which turns a
//! typo into an error instead of a silently ignored setting.

use std::fmt::Write as _;

use lcl_core::episodes::ShotStrategy;
use lcl_core::eval::{PairKind, PairProtocol, DEFAULT_FALSE_RATES, DEFAULT_SHOTS};
use lcl_core::neighbors::{NeighborConfig, SimilarityWeights};
use lcl_core::net::ModelConfig;
use lcl_core::train::{Strategy, TrainConfig};
use lcl_core::UniverseParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory used when no `--run-dir` flag is given; empty for none.
    pub output_dir: String,
    pub universe: UniverseSection,
    pub neighbors: NeighborSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSection {
    pub seed: u64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub dim: usize,
    pub sigma_img: f64,
    pub sigma_txt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborSection {
    /// Neighbor-set size for train classes.
    pub n: usize,
    pub seed: u64,
    pub w_image_image: f64,
    pub w_image_text: f64,
    pub w_text_text: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub v_epi: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: bool,
    pub warmup: usize,
    pub seed: u64,
    /// `fixed:N`, `uniform:LO-HI` or `weighted:LO-HI`.
    pub shots: String,
    pub mix_ratio: f64,
    pub supervise_support: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain: StageSection,
    #[serde(rename = "2way")]
    pub two_way: StageSection,
    #[serde(rename = "2way-random")]
    pub two_way_random: StageSection,
    #[serde(rename = "2way-weight")]
    pub two_way_weight: StageSection,
    pub mix: StageSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub seed: u64,
    pub episodes: usize,
    pub zero_shot_episodes: usize,
    /// `hard_pairs` and/or `all_pairs`; ablations use the first entry.
    pub protocols: Vec<String>,
    /// Maximum episodes per class pair.
    pub pair_budget: usize,
    pub shots: Vec<usize>,
    pub false_rates: Vec<f64>,
    /// Shots per class for the false-rate and position ablations.
    pub ablation_shots: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let u = UniverseParams::default();
        let nb = NeighborConfig::default();
        RunConfig {
            output_dir: String::new(),
            universe: UniverseSection {
                seed: u.seed,
                n_train: u.n_train,
                n_holdout: u.n_holdout,
                dim: u.dim,
                sigma_img: u.sigma_img,
                sigma_txt: u.sigma_txt,
            },
            neighbors: NeighborSection {
                n: nb.n_train,
                seed: nb.seed,
                w_image_image: nb.weights.w_ii,
                w_image_text: nb.weights.w_it,
                w_text_text: nb.weights.w_tt,
            },
            model: ModelSection { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 128, max_seq: 65, v_epi: 16, seed: 1 },
            train: TrainSection {
                pretrain: StageSection::from_core(&TrainConfig::for_strategy(Strategy::Pretrain)),
                two_way: StageSection::from_core(&TrainConfig::for_strategy(Strategy::TwoWay)),
                two_way_random: StageSection::from_core(&TrainConfig::for_strategy(Strategy::TwoWayRandom)),
                two_way_weight: StageSection::from_core(&TrainConfig::for_strategy(Strategy::TwoWayWeight)),
                mix: StageSection::from_core(&TrainConfig::for_strategy(Strategy::Mix)),
            },
            eval: EvalSection {
                seed: 2024,
                episodes: 2000,
                zero_shot_episodes: 2000,
                protocols: vec!["hard_pairs".into(), "all_pairs".into()],
                pair_budget: 1_000_000,
                shots: DEFAULT_SHOTS.to_vec(),
                false_rates: DEFAULT_FALSE_RATES.to_vec(),
                ablation_shots: 16,
            },
        }
    }
}

impl StageSection {
    fn from_core(c: &TrainConfig) -> Self {
        StageSection {
            iterations: c.iterations,
            batch_size: c.batch_size,
            lr: c.lr,
            lr_decay: c.lr_decay,
            warmup: c.warmup,
            seed: c.seed,
            shots: format_shots(&c.shot_strategy),
            mix_ratio: c.mix_ratio,
            supervise_support: c.supervise_support,
            eval_every: c.eval_every,
            eval_episodes: c.eval_episodes,
        }
    }
}

pub fn format_shots(s: &ShotStrategy) -> String {
    match *s {
        ShotStrategy::Fixed(n) => format!("fixed:{n}"),
        ShotStrategy::Uniform { lo, hi } => format!("uniform:{lo}-{hi}"),
        ShotStrategy::Weighted { lo, hi } => format!("weighted:{lo}-{hi}"),
    }
}

pub fn parse_shots(s: &str) -> Result<ShotStrategy> {
    let bad = || CliError::Config(format!("shots `{s}`: expected fixed:N, uniform:LO-HI or weighted:LO-HI"));
    let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
    let range = || -> Result<(usize, usize)> {
        let (lo, hi) = arg.split_once('-').ok_or_else(bad)?;
        Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
    };
    let strategy = match kind.trim() {
        "fixed" => ShotStrategy::Fixed(arg.trim().parse().map_err(|_| bad())?),
        "uniform" => {
            let (lo, hi) = range()?;
            ShotStrategy::Uniform { lo, hi }
        }
        "weighted" => {
            let (lo, hi) = range()?;
            ShotStrategy::Weighted { lo, hi }
        }
        _ => return Err(bad()),
    };
    strategy.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(strategy)
}

pub fn parse_protocol(name: &str, budget: usize) -> Result<PairProtocol> {
    let kind = match name {
        "hard_pairs" => PairKind::HardPairs,
        "all_pairs" => PairKind::AllPairs,
        _ => return Err(CliError::Config(format!("unknown protocol `{name}` (hard_pairs, all_pairs)"))),
    };
    Ok(PairProtocol { kind, budget })
}

/// Copies `user` onto `base`, refusing keys that `base` does not have.
fn overlay(base: &mut Table, user: Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(CliError::UnknownKey(path)),
            (Some(Value::Table(b)), Value::Table(u)) => overlay(b, u, &path)?,
            (Some(Value::Table(_)), _) => return Err(CliError::Config(format!("`{path}` must be a table"))),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

fn to_table(cfg: &RunConfig) -> Table {
    Table::try_from(cfg).expect("config serializes to a table")
}

fn from_table(t: Table) -> Result<RunConfig> {
    let cfg: RunConfig = t.try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut base = to_table(&RunConfig::default());
        overlay(&mut base, user, "")?;
        from_table(base)
    }

    /// Applies one `section.key=value` override. The value is read as a
    /// TOML literal when it parses as one and as a bare string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
        let path = path.trim();
        let value = format!("v = {}", raw.trim())
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.trim().to_string()));
        let mut user = Table::new();
        let keys: Vec<&str> = path.split('.').collect();
        let (last, parents) = keys.split_last().expect("split yields at least one item");
        let mut leaf = Table::new();
        leaf.insert((*last).to_string(), value);
        for k in parents.iter().rev() {
            let mut t = Table::new();
            t.insert((*k).to_string(), Value::Table(leaf));
            leaf = t;
        }
        user.extend(leaf);
        let mut base = to_table(self);
        overlay(&mut base, user, "")?;
        *self = from_table(base)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn universe_params(&self) -> UniverseParams {
        let u = &self.universe;
        UniverseParams {
            seed: u.seed,
            n_train: u.n_train,
            n_holdout: u.n_holdout,
            dim: u.dim,
            sigma_img: u.sigma_img,
            sigma_txt: u.sigma_txt,
        }
    }

    pub fn neighbor_config(&self) -> Result<NeighborConfig> {
        let n = &self.neighbors;
        let weights = SimilarityWeights::new(n.w_image_image, n.w_image_text, n.w_text_text)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(NeighborConfig { n_train: n.n, weights, seed: n.seed })
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_seq: m.max_seq,
            vocab: m.v_epi + self.universe.n_train,
            v_epi: m.v_epi,
            dim_in: self.universe.dim,
        }
    }

    pub fn stage(&self, s: Strategy) -> &StageSection {
        match s {
            Strategy::Pretrain => &self.train.pretrain,
            Strategy::TwoWay => &self.train.two_way,
            Strategy::TwoWayRandom => &self.train.two_way_random,
            Strategy::TwoWayWeight => &self.train.two_way_weight,
            Strategy::Mix => &self.train.mix,
        }
    }

    pub fn train_config(&self, s: Strategy) -> Result<TrainConfig> {
        let st = self.stage(s);
        Ok(TrainConfig {
            strategy: s,
            iterations: st.iterations,
            batch_size: st.batch_size,
            lr: st.lr,
            lr_decay: st.lr_decay,
            warmup: st.warmup,
            seed: st.seed,
            shot_strategy: parse_shots(&st.shots)?,
            mix_ratio: st.mix_ratio,
            supervise_support: st.supervise_support,
            eval_every: st.eval_every,
            eval_episodes: st.eval_episodes,
        })
    }

    pub fn protocols(&self) -> Result<Vec<PairProtocol>> {
        self.eval.protocols.iter().map(|p| parse_protocol(p, self.eval.pair_budget)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let core = |e: lcl_core::Error| CliError::Config(e.to_string());
        let u = &self.universe;
        if u.n_train < 2 || u.n_holdout < 2 || u.dim == 0 {
            return Err(CliError::Config("universe needs n_train >= 2, n_holdout >= 2 and dim >= 1".into()));
        }
        if !(u.sigma_img >= 0.0 && u.sigma_txt >= 0.0) {
            return Err(CliError::Config("universe sigmas must be non-negative".into()));
        }
        let nb = self.neighbor_config()?;
        if nb.n_train == 0 || nb.n_train >= u.n_train {
            return Err(CliError::Config(format!("neighbors.n = {} must be in [1, n_train - 1]", nb.n_train)));
        }
        let model = self.model_config();
        model.validate().map_err(core)?;
        for s in Strategy::ALL {
            self.train_config(s)?.validate(&model).map_err(core)?;
        }
        let e = &self.eval;
        if e.episodes == 0 || e.zero_shot_episodes == 0 || e.pair_budget == 0 {
            return Err(CliError::Config("eval episode counts and pair_budget must be >= 1".into()));
        }
        if self.protocols()?.is_empty() {
            return Err(CliError::Config("eval.protocols is empty".into()));
        }
        if e.shots.is_empty() || e.shots.contains(&0) {
            return Err(CliError::Config("eval.shots must list shot counts >= 1".into()));
        }
        let longest = e.shots.iter().copied().max().unwrap_or(0).max(e.ablation_shots);
        model.validate_for_shots(longest).map_err(core)?;
        if e.ablation_shots == 0 {
            return Err(CliError::Config("eval.ablation_shots must be >= 1".into()));
        }
        if e.false_rates.is_empty() || e.false_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(CliError::Config("eval.false_rates must be non-empty and within [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let d = RunConfig::default();
        d.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&d.to_toml()).unwrap(), d);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), d);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = RunConfig::from_toml_str("[train.2way]\niterations = 50\n[model]\nd_model = 32\n").unwrap();
        assert_eq!(c.train.two_way.iterations, 50);
        assert_eq!(c.train.two_way.lr, RunConfig::default().train.two_way.lr);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.n_layers, 2);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = RunConfig::from_toml_str("[model]\nwidth = 3\n").unwrap_err();
        assert!(matches!(e, CliError::UnknownKey(ref k) if k == "model.width"), "{e}");
        let e = RunConfig::from_toml_str("[train.3way]\niterations = 1\n").unwrap_err();
        assert!(matches!(e, CliError::UnknownKey(ref k) if k == "train.3way"), "{e}");
        assert!(matches!(RunConfig::from_toml_str("seed = 1\n"), Err(CliError::UnknownKey(_))));
    }

    #[test]
    fn type_and_range_errors() {
        assert!(matches!(RunConfig::from_toml_str("[model]\nd_model = \"big\"\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[model]\nn_heads = 3\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[model]\nmax_seq = 40\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[train.mix]\nmix_ratio = 2.0\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[eval]\nprotocols = [\"isekai\"]\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("model = 3\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[model\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.set("train.2way-random.iterations=12").unwrap();
        assert_eq!(c.train.two_way_random.iterations, 12);
        c.set("train.mix.shots = uniform:2-8").unwrap();
        assert_eq!(c.train.mix.shots, "uniform:2-8");
        c.set("eval.shots=[2, 16]").unwrap();
        assert_eq!(c.eval.shots, vec![2, 16]);
        c.set("output_dir=runs/x").unwrap();
        assert_eq!(c.output_dir, "runs/x");
        assert!(matches!(c.set("model.depth=3"), Err(CliError::UnknownKey(_))));
        assert!(matches!(c.set("model.d_model=wide"), Err(CliError::Config(_))));
        assert!(matches!(c.set("no-equals"), Err(CliError::Config(_))));
        assert!(matches!(c.set("train.mix.shots=fixed:0"), Err(CliError::Config(_))));
    }

    #[test]
    fn shot_strings() {
        for s in [ShotStrategy::Fixed(16), ShotStrategy::UNIFORM_2_16, ShotStrategy::WEIGHTED_2_16] {
            assert_eq!(parse_shots(&format_shots(&s)).unwrap(), s);
        }
        for bad in ["16", "fixed:x", "uniform:16-2", "weighted:1-16", "gaussian:2-3"] {
            assert!(parse_shots(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.set("eval.seed=5").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn derived_model_config() {
        let m = RunConfig::default().model_config();
        assert_eq!((m.vocab, m.v_epi, m.dim_in), (916, 16, 64));
    }
}
