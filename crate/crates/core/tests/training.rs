//! Training stages on small universes: batch composition, sampling laws
//! audited from the training log, determinism and error paths.

use lcl_core::episodes::ShotStrategy;
use lcl_core::eval::eval_zeroshot;
use lcl_core::neighbors::{hard_negative_probability, NeighborConfig, NeighborTable};
use lcl_core::net::{ModelConfig, Params};
use lcl_core::train::{
    finetune_random, finetune_weighted, pretrain_zeroshot, train, train_2way, train_mix, MetricsLog, Strategy,
    TaskKind, TrainConfig, TrainContext,
};
use lcl_core::{ClassUniverse, Error, UniverseParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N_TRAIN: usize = 40;
const N_NEIGHBORS: usize = 10;

fn world() -> (ClassUniverse, NeighborTable) {
    let u = ClassUniverse::create(&UniverseParams { n_train: N_TRAIN, n_holdout: 10, dim: 16, ..Default::default() })
        .unwrap();
    let nb = NeighborTable::build(&u, &NeighborConfig { n_train: N_NEIGHBORS, ..Default::default() }).unwrap();
    (u, nb)
}

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_seq: 65, vocab: 4 + N_TRAIN, v_epi: 4, dim_in: 16 }
}

fn cfg(strategy: Strategy, iterations: usize) -> TrainConfig {
    TrainConfig { iterations, ..TrainConfig::for_strategy(strategy) }
}

/// Pearson statistic and upper-tail p-value of observed counts against
/// expected probabilities.
fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    ChiSquared::new((counts.len() - 1) as f64).unwrap().sf(stat)
}

fn shot_histogram(log: &MetricsLog, lo: usize, hi: usize) -> Vec<usize> {
    let mut counts = vec![0; hi - lo + 1];
    for r in &log.records {
        counts[r.shots - lo] += 1;
    }
    counts
}

#[test]
fn stage_graph() {
    assert_eq!(Strategy::Pretrain.prerequisite(), None);
    assert_eq!(Strategy::TwoWay.prerequisite(), Some(Strategy::Pretrain));
    assert_eq!(Strategy::Mix.prerequisite(), Some(Strategy::Pretrain));
    assert_eq!(Strategy::TwoWayRandom.prerequisite(), Some(Strategy::TwoWay));
    assert_eq!(Strategy::TwoWayWeight.prerequisite(), Some(Strategy::TwoWay));
    for s in Strategy::ALL {
        assert_eq!(Strategy::from_stage_name(s.stage_name()), Some(s));
    }
    assert_eq!(Strategy::from_stage_name("3way"), None);
}

#[test]
fn default_budgets() {
    let pre = TrainConfig::for_strategy(Strategy::Pretrain);
    assert_eq!((pre.iterations, pre.batch_size, pre.lr), (20_000, 32, 3e-4));
    assert!(pre.lr_decay);
    assert_eq!(TrainConfig::for_strategy(Strategy::TwoWay).shot_strategy, ShotStrategy::Fixed(16));
    assert_eq!(TrainConfig::for_strategy(Strategy::Mix).shot_strategy, ShotStrategy::Fixed(16));
    assert_eq!(TrainConfig::for_strategy(Strategy::TwoWayRandom).shot_strategy, ShotStrategy::UNIFORM_2_16);
    assert_eq!(TrainConfig::for_strategy(Strategy::TwoWayWeight).shot_strategy, ShotStrategy::WEIGHTED_2_16);
}

#[test]
fn cosine_schedule_endpoints() {
    let c = TrainConfig { iterations: 100, lr: 1e-3, warmup: 0, ..TrainConfig::for_strategy(Strategy::TwoWay) };
    assert_eq!(c.lr_at(0), 1e-3);
    assert!((c.lr_at(50) - 5e-4).abs() < 1e-15);
    assert!(c.lr_at(99) < 1e-6);
    let w = TrainConfig { warmup: 10, ..c.clone() };
    assert!((w.lr_at(0) - 1e-4 * c.lr_at(0) / 1e-3).abs() < 1e-15);
    let flat = TrainConfig { lr_decay: false, ..c };
    assert_eq!(flat.lr_at(99), 1e-3);
}

#[test]
fn invalid_configs_rejected() {
    let m = tiny_model();
    assert!(matches!(cfg(Strategy::TwoWay, 0).validate(&m), Err(Error::Config(_))));
    let bad_mix = TrainConfig { mix_ratio: 1.5, ..cfg(Strategy::Mix, 1) };
    assert!(matches!(bad_mix.validate(&m), Err(Error::Config(_))));
    let too_long = ModelConfig { max_seq: 64, ..m };
    assert!(matches!(cfg(Strategy::TwoWay, 1).validate(&too_long), Err(Error::Config(_))));
    assert!(cfg(Strategy::Pretrain, 1).validate(&too_long).is_ok());
}

#[test]
fn stage_functions_check_their_strategy() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let p = Params::init(&tiny_model(), 1).unwrap();
    let wrong = cfg(Strategy::Mix, 1);
    assert!(matches!(train_2way(p.clone(), &ctx, &wrong), Err(Error::Config(_))));
    assert!(matches!(finetune_random(p.clone(), &ctx, &wrong), Err(Error::Config(_))));
    assert!(matches!(finetune_weighted(p.clone(), &ctx, &wrong), Err(Error::Config(_))));
    assert!(matches!(train_mix(p, &ctx, &cfg(Strategy::TwoWay, 1)), Err(Error::Config(_))));
}

#[test]
fn two_way_without_neighbors_is_an_error() {
    let (u, _) = world();
    let ctx = TrainContext { universe: &u, neighbors: None };
    let p = Params::init(&tiny_model(), 1).unwrap();
    assert!(matches!(train_2way(p, &ctx, &cfg(Strategy::TwoWay, 1)), Err(Error::Missing { .. })));
}

#[test]
fn mix_batches_are_half_zero_shot() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let p = Params::init(&tiny_model(), 1).unwrap();
    let out = train_mix(p, &ctx, &cfg(Strategy::Mix, 5)).unwrap();
    assert_eq!(out.log.records.len(), 5 * 32);
    for it in 0..5 {
        let batch: Vec<_> = out.log.records.iter().filter(|r| r.iteration == it).collect();
        let zs = batch.iter().filter(|r| r.task == TaskKind::ZeroShot).count();
        assert_eq!((zs, batch.len() - zs), (16, 16));
        assert!(batch.iter().all(|r| (r.task == TaskKind::ZeroShot) == (r.shots == 0 && r.neg_rank == 0)));
        assert!(batch.iter().filter(|r| r.task == TaskKind::TwoWay).all(|r| r.shots == 16));
    }
}

#[test]
fn training_is_bit_deterministic() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let run = || train_mix(Params::init(&tiny_model(), 3).unwrap(), &ctx, &cfg(Strategy::Mix, 4)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.params.data, b.params.data);
    assert_eq!(a.state.m, b.state.m);
    assert_eq!(a.log.records, b.log.records);
    let other = train_mix(
        Params::init(&tiny_model(), 3).unwrap(),
        &ctx,
        &TrainConfig { seed: 2, ..cfg(Strategy::Mix, 4) },
    )
    .unwrap();
    assert_ne!(a.params.data, other.params.data);
}

#[test]
fn pretraining_loss_decreases() {
    let (u, _) = world();
    let ctx = TrainContext { universe: &u, neighbors: None };
    let c = TrainConfig { lr: 1e-3, ..cfg(Strategy::Pretrain, 1000) };
    let out = pretrain_zeroshot(&tiny_model(), 1, &ctx, &c).unwrap();
    let w = out.log.windowed_loss(100);
    assert_eq!(w.len(), 10);
    assert!(w[9] < w[0], "windows {w:?}");
    assert!(out.log.final_loss.is_finite());
    assert!(out.log.records.iter().all(|r| r.task == TaskKind::ZeroShot));
}

#[test]
fn snapshots_follow_eval_interval() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let c = TrainConfig { eval_every: 2, eval_episodes: 20, ..cfg(Strategy::TwoWay, 5) };
    let out = train_2way(Params::init(&tiny_model(), 1).unwrap(), &ctx, &c).unwrap();
    let iters: Vec<usize> = out.log.snapshots.iter().map(|s| s.iteration).collect();
    assert_eq!(iters, vec![2, 4]);
    assert!(out.log.snapshots_csv().starts_with("iteration,accuracy\n"));
}

#[test]
fn logged_negative_ranks_follow_linear_law() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let c = TrainConfig { batch_size: 64, shot_strategy: ShotStrategy::Fixed(1), ..cfg(Strategy::TwoWay, 100) };
    let out = train(Params::init(&tiny_model(), 1).unwrap(), &ctx, &c).unwrap();
    let mut counts = vec![0; N_NEIGHBORS];
    for r in &out.log.records {
        counts[r.neg_rank - 1] += 1;
    }
    let probs: Vec<f64> = (1..=N_NEIGHBORS).map(|j| hard_negative_probability(j, N_NEIGHBORS)).collect();
    let p = chi_square(&counts, &probs);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn logged_shot_counts_follow_their_laws() {
    let (u, nb) = world();
    let ctx = TrainContext { universe: &u, neighbors: Some(&nb) };
    let p0 = Params::init(&tiny_model(), 1).unwrap();
    for strategy in [Strategy::TwoWayRandom, Strategy::TwoWayWeight] {
        let c = TrainConfig { batch_size: 64, ..cfg(strategy, 60) };
        let out = train(p0.clone(), &ctx, &c).unwrap();
        let counts = shot_histogram(&out.log, 2, 16);
        let probs: Vec<f64> = (2..=16).map(|n| c.shot_strategy.probability(n)).collect();
        if strategy == Strategy::TwoWayWeight {
            // Pool the sparse low-shot cells so every expected count is >= 5.
            let n: usize = counts.iter().sum();
            let split = (0..probs.len()).find(|&i| probs[i] * n as f64 >= 5.0).unwrap();
            let mut pooled_c = vec![counts[..split].iter().sum::<usize>()];
            pooled_c.extend_from_slice(&counts[split..]);
            let mut pooled_p = vec![probs[..split].iter().sum::<f64>()];
            pooled_p.extend_from_slice(&probs[split..]);
            let p = chi_square(&pooled_c, &pooled_p);
            assert!(p > 0.01, "{strategy:?}: p = {p}, counts {counts:?}");
            let frac16 = counts[14] as f64 / n as f64;
            assert!((frac16 - 0.63212).abs() < 0.03, "16-shot fraction {frac16}");
        } else {
            let p = chi_square(&counts, &probs);
            assert!(p > 0.01, "{strategy:?}: p = {p}, counts {counts:?}");
        }
    }
}

#[test]
fn untrained_zero_shot_is_near_uniform() {
    let (u, _) = world();
    let p = Params::init(&tiny_model(), 1).unwrap();
    let e = eval_zeroshot(&p, &u, 400, 1).unwrap();
    assert!(e.accuracy < 0.1, "accuracy {}", e.accuracy);
}

#[test]
fn default_pretraining_reaches_zero_shot_target() {
    let u = ClassUniverse::create(&UniverseParams::default()).unwrap();
    let model = ModelConfig {
        d_model: 64,
        n_layers: 2,
        n_heads: 4,
        d_ff: 128,
        max_seq: 65,
        vocab: 16 + u.n_train(),
        v_epi: 16,
        dim_in: u.dim(),
    };
    let ctx = TrainContext { universe: &u, neighbors: None };
    let out = pretrain_zeroshot(&model, 1, &ctx, &TrainConfig::for_strategy(Strategy::Pretrain)).unwrap();
    let e = eval_zeroshot(&out.params, &u, 2000, 99).unwrap();
    assert!(e.accuracy >= 0.9, "zero-shot accuracy {}", e.accuracy);
}
