//! Zero-shot pretraining and the four link-context fine-tuning strategies.

use std::fmt::Write as _;
use std::time::Instant;

use crate::episodes::{
    bind_labels, build_2way_episode, build_zero_shot, episode_to_tokens, zero_shot_to_tokens, ShotStrategy, Vocab,
};
use crate::error::{config_err, Error, Result};
use crate::eval::{eval_nshot, PairProtocol};
use crate::neighbors::NeighborTable;
use crate::net::{adam_step, loss_and_grad, HeadMask, ModelConfig, OptimizerState, Params, TokenSeq};
use crate::rng::StreamRng;
use crate::universe::{ClassId, ClassUniverse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Pretrain,
    TwoWay,
    TwoWayRandom,
    TwoWayWeight,
    Mix,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Pretrain, Strategy::TwoWay, Strategy::TwoWayRandom, Strategy::TwoWayWeight, Strategy::Mix];

    /// Stage name used on the command line and in run directories.
    pub fn stage_name(&self) -> &'static str {
        match self {
            Strategy::Pretrain => "pretrain",
            Strategy::TwoWay => "2way",
            Strategy::TwoWayRandom => "2way-random",
            Strategy::TwoWayWeight => "2way-weight",
            Strategy::Mix => "mix",
        }
    }

    pub fn from_stage_name(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|x| x.stage_name() == s)
    }

    /// The stage whose checkpoint this one starts from.
    pub fn prerequisite(&self) -> Option<Strategy> {
        match self {
            Strategy::Pretrain => None,
            Strategy::TwoWay | Strategy::Mix => Some(Strategy::Pretrain),
            Strategy::TwoWayRandom | Strategy::TwoWayWeight => Some(Strategy::TwoWay),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay to zero over `iterations`.
    pub lr_decay: bool,
    /// Linear warm-up iterations.
    pub warmup: usize,
    pub seed: u64,
    pub shot_strategy: ShotStrategy,
    /// Fraction of zero-shot items per batch for [`Strategy::Mix`].
    pub mix_ratio: f64,
    /// Also supervise each support label, not just the query answer.
    pub supervise_support: bool,
    /// Evaluate every this many iterations (0 disables snapshots).
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl TrainConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        let shot_strategy = match strategy {
            Strategy::TwoWayRandom => ShotStrategy::UNIFORM_2_16,
            Strategy::TwoWayWeight => ShotStrategy::WEIGHTED_2_16,
            _ => ShotStrategy::Fixed(16),
        };
        let iterations = match strategy {
            Strategy::Pretrain => 20_000,
            Strategy::TwoWay => 6000,
            Strategy::Mix => 8000,
            Strategy::TwoWayRandom => 8000,
            Strategy::TwoWayWeight => 6000,
        };
        TrainConfig {
            strategy,
            iterations,
            batch_size: 32,
            lr: 3e-4,
            lr_decay: true,
            warmup: 0,
            seed: 1,
            shot_strategy,
            mix_ratio: 0.5,
            supervise_support: false,
            eval_every: 0,
            eval_episodes: 200,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(config_err("iterations and batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(config_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(config_err(format!("mix_ratio {} outside [0, 1]", self.mix_ratio)));
        }
        if self.strategy != Strategy::Pretrain {
            self.shot_strategy.validate()?;
            model.validate_for_shots(self.shot_strategy.max_shots())?;
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        let warm = if self.warmup > 0 && iter < self.warmup { (iter + 1) as f64 / self.warmup as f64 } else { 1.0 };
        let decay = if self.lr_decay {
            0.5 * (1.0 + (std::f64::consts::PI * iter as f64 / self.iterations as f64).cos())
        } else {
            1.0
        };
        self.lr * warm * decay
    }

    /// Zero-shot items per batch.
    pub fn zero_shot_count(&self) -> usize {
        match self.strategy {
            Strategy::Pretrain => self.batch_size,
            Strategy::Mix => (self.mix_ratio * self.batch_size as f64).round() as usize,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    ZeroShot,
    TwoWay,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::ZeroShot => "zero_shot",
            TaskKind::TwoWay => "2way",
        }
    }
}

/// One training episode as logged: the sampling decisions that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub shots: usize,
    /// 1-based hard-negative rank; 0 for zero-shot items.
    pub neg_rank: usize,
    pub task: TaskKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpisodeRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_loss: f64,
    pub wall_clock_secs: f64,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,lr,shots,neg_rank,task_kind\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6e},{},{},{}",
                r.iteration,
                r.loss,
                r.lr,
                r.shots,
                r.neg_rank,
                r.task.name()
            );
        }
        out
    }

    pub fn snapshots_csv(&self) -> String {
        let mut out = String::from("iteration,accuracy\n");
        for s in &self.snapshots {
            let _ = writeln!(out, "{},{:.6}", s.iteration, s.accuracy);
        }
        out
    }

    /// Mean batch loss over consecutive windows of `window` iterations.
    pub fn windowed_loss(&self, window: usize) -> Vec<f64> {
        let mut per_iter: Vec<f64> = Vec::new();
        let mut last = usize::MAX;
        for r in &self.records {
            if r.iteration != last {
                per_iter.push(r.loss);
                last = r.iteration;
            }
        }
        per_iter.chunks(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }
}

pub struct TrainOutcome {
    pub params: Params,
    pub state: OptimizerState,
    pub log: MetricsLog,
}

/// Read-only inputs shared by all stages.
pub struct TrainContext<'a> {
    pub universe: &'a ClassUniverse,
    pub neighbors: Option<&'a NeighborTable>,
}

struct Item {
    seq: TokenSeq,
    shots: usize,
    neg_rank: usize,
    task: TaskKind,
}

fn make_batch(ctx: &TrainContext<'_>, cfg: &TrainConfig, vocab: &Vocab, max_seq: usize, iter: usize) -> Result<Vec<Item>> {
    let root = StreamRng::new(cfg.seed).derive(cfg.strategy.stage_name(), 0).derive("batch", iter as u64);
    let n_zero = cfg.zero_shot_count();
    let n_train = ctx.universe.n_train();
    (0..cfg.batch_size)
        .map(|b| {
            let mut rng = root.derive("episode", b as u64);
            if b < n_zero {
                let class = ClassId(rng.below(n_train) as u32);
                let item = build_zero_shot(ctx.universe, class, vocab, &mut rng)?;
                return Ok(Item { seq: zero_shot_to_tokens(&item, vocab)?, shots: 0, neg_rank: 0, task: TaskKind::ZeroShot });
            }
            let neighbors = ctx
                .neighbors
                .ok_or_else(|| Error::Missing { path: "neighbors.csv".into(), msg: "2-way training needs the neighbor cache".into() })?;
            let pos = ClassId(rng.below(n_train) as u32);
            let (neg, neg_rank) = neighbors.get(pos)?.sample_hard_negative(&mut rng)?;
            let shots = cfg.shot_strategy.sample(&mut rng);
            let binding = bind_labels(pos, neg, vocab.v_epi, &mut rng)?;
            let e = build_2way_episode(ctx.universe, pos, neg, shots, binding, &mut rng)?;
            Ok(Item {
                seq: episode_to_tokens(&e, vocab, max_seq, cfg.supervise_support)?,
                shots,
                neg_rank,
                task: TaskKind::TwoWay,
            })
        })
        .collect()
}

/// Runs `cfg.iterations` Adam steps from `params` with a fresh optimizer.
pub fn train(params: Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(&params.cfg)?;
    let vocab = Vocab { v_epi: params.cfg.v_epi, n_global: params.cfg.n_global() };
    if vocab.n_global < ctx.universe.n_train() {
        return Err(config_err(format!(
            "model has {} global symbols for {} train classes",
            vocab.n_global,
            ctx.universe.n_train()
        )));
    }
    if params.cfg.dim_in != ctx.universe.dim() {
        return Err(config_err(format!(
            "model input dim {} but universe dim {}",
            params.cfg.dim_in,
            ctx.universe.dim()
        )));
    }
    if cfg.strategy != Strategy::Pretrain && ctx.neighbors.is_none() {
        return Err(Error::Missing { path: "neighbors.csv".into(), msg: "2-way training needs the neighbor cache".into() });
    }
    let start = Instant::now();
    let mut params = params;
    let mut state = OptimizerState::new(&params);
    let mut log = MetricsLog::default();
    for iter in 0..cfg.iterations {
        let items = make_batch(ctx, cfg, &vocab, params.cfg.max_seq, iter)?;
        let seqs: Vec<TokenSeq> = items.iter().map(|it| it.seq.clone()).collect();
        let (loss, grads) = loss_and_grad(&params, &seqs, HeadMask::Full)?;
        if !loss.is_finite() || grads.data.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "{} iteration {iter}: loss {loss}, gradient finite: {}",
                cfg.strategy.stage_name(),
                grads.data.iter().all(|g| g.is_finite())
            )));
        }
        let lr = cfg.lr_at(iter);
        adam_step(&mut params, &grads, &mut state, lr)?;
        if !params.all_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after iteration {iter}")));
        }
        for it in &items {
            log.records.push(EpisodeRecord { iteration: iter, loss, lr, shots: it.shots, neg_rank: it.neg_rank, task: it.task });
        }
        log.final_loss = loss;
        if cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 {
            let acc = snapshot(&params, ctx, cfg)?;
            log.snapshots.push(Snapshot { iteration: iter + 1, accuracy: acc });
        }
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { params, state, log })
}

fn snapshot(p: &Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<f64> {
    let seed = cfg.seed ^ 0x5eed;
    match (cfg.strategy, ctx.neighbors) {
        (Strategy::Pretrain, _) | (_, None) => {
            Ok(crate::eval::eval_zeroshot(p, ctx.universe, cfg.eval_episodes, seed)?.accuracy)
        }
        (_, Some(nb)) => {
            let shots = cfg.shot_strategy.max_shots();
            Ok(eval_nshot(p, ctx.universe, nb, shots, PairProtocol::hard(usize::MAX), cfg.eval_episodes, seed)?.accuracy)
        }
    }
}

fn expect_strategy(cfg: &TrainConfig, allowed: &[Strategy]) -> Result<()> {
    if allowed.contains(&cfg.strategy) {
        Ok(())
    } else {
        Err(config_err(format!("stage called with strategy {}", cfg.strategy.stage_name())))
    }
}

/// Trains fresh parameters on single-query items labelled with global symbols.
pub fn pretrain_zeroshot(model: &ModelConfig, model_seed: u64, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_strategy(cfg, &[Strategy::Pretrain])?;
    train(Params::init(model, model_seed)?, ctx, cfg)
}

/// Fixed-shot 2-way training with hard negatives, starting from `base`.
pub fn train_2way(base: Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_strategy(cfg, &[Strategy::TwoWay])?;
    train(base, ctx, cfg)
}

pub fn finetune_random(ckpt: Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_strategy(cfg, &[Strategy::TwoWayRandom])?;
    train(ckpt, ctx, cfg)
}

pub fn finetune_weighted(ckpt: Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_strategy(cfg, &[Strategy::TwoWayWeight])?;
    train(ckpt, ctx, cfg)
}

pub fn train_mix(base: Params, ctx: &TrainContext<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_strategy(cfg, &[Strategy::Mix])?;
    train(base, ctx, cfg)
}
