//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 5 to 9 and 11 run the default pipeline (gen, pretrain, 2way,
//! 2way-random, mix, evaluations and ablations) through the command layer
//! in a scratch run directory; set `LCL_ACCEPTANCE_DIR` to keep it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use lcl_cli::commands::{self, Ablation, GenOptions, Session, StageSummary, Target};
use lcl_cli::reports::{condition_value, model_rows, parse_report, ReportRow};
use lcl_cli::{RunConfig, RunDir};
use lcl_core::episodes::{bind_labels, build_2way_episode, episode_to_tokens, ShotStrategy, Vocab};
use lcl_core::eval::{eval_nshot, PairProtocol};
use lcl_core::neighbors::{hard_negative_probability, NeighborConfig, NeighborTable};
use lcl_core::net::{forward, lcl_loss, loss_and_grad, softmax, HeadMask, ModelConfig, Params, Target as SeqTarget, Token, TokenSeq};
use lcl_core::train::Strategy;
use lcl_core::{ClassId, ClassUniverse, StreamRng, UniverseParams};
use lcl_verify::{
    chi_square_p, false_rate_verdict, plateau_verdict, pool_leading, position_verdict, random_gain_verdict,
    retention_verdict, tol, Verdict,
};

fn emit(v: Verdict, all: &mut Vec<Verdict>) {
    println!("{}", v.line());
    let _ = std::io::stdout().flush();
    all.push(v);
}

fn progress(msg: &str) {
    eprintln!("  .. {msg}");
}

fn sampling_laws() -> Verdict {
    let start = Instant::now();
    let u = ClassUniverse::create(&UniverseParams::default()).unwrap();
    let table = NeighborTable::build(&u, &NeighborConfig::default()).unwrap();
    let set = table.get(ClassId(0)).unwrap();
    let n = set.len();
    let mut rng = StreamRng::new(11).derive("acceptance-ranks", 0);
    let mut ranks = vec![0usize; n];
    for _ in 0..tol::SAMPLING_DRAWS {
        let (_, rank) = set.sample_hard_negative(&mut rng).unwrap();
        ranks[rank - 1] += 1;
    }
    let rank_probs: Vec<f64> = (1..=n).map(|j| hard_negative_probability(j, n)).collect();
    let p_rank = chi_square_p(&ranks, &rank_probs);

    let weighted = ShotStrategy::WEIGHTED_2_16;
    let mut rng = StreamRng::new(12).derive("acceptance-shots", 0);
    let mut shots = vec![0usize; 15];
    for _ in 0..tol::SAMPLING_DRAWS {
        shots[weighted.sample(&mut rng) - 2] += 1;
    }
    let shot_probs: Vec<f64> = (2..=16).map(|j| weighted.probability(j)).collect();
    let (pc, pp) = pool_leading(&shots, &shot_probs, tol::SAMPLING_DRAWS, 5.0);
    let p_shot = chi_square_p(&pc, &pp);
    let secs = start.elapsed().as_secs_f64();
    let ok = n == 100 && p_rank > tol::CHI_SQUARE_P && p_shot > tol::CHI_SQUARE_P && secs < tol::SAMPLING_SECS;
    Verdict::new(
        1,
        "sampling-laws",
        ok,
        format!(
            "rank law over {n} neighbors p={p_rank:.4}; shot law p={p_shot:.4} ({} pooled cells, 16-shot share {:.4}); {} draws each; {secs:.2}s (< {}s)",
            pc.len(),
            shots[14] as f64 / tol::SAMPLING_DRAWS as f64,
            tol::SAMPLING_DRAWS,
            tol::SAMPLING_SECS
        ),
    )
}

fn noisy(cfg: &ModelConfig, seed: u64, scale: f64) -> Params {
    let mut p = Params::init(cfg, seed).unwrap();
    let mut rng = StreamRng::new(seed ^ 0xfeed);
    p.data.iter_mut().for_each(|x| *x += scale * rng.gaussian());
    p
}

fn random_seq(cfg: &ModelConfig, len: usize, rng: &mut StreamRng) -> TokenSeq {
    let tokens = (0..len)
        .map(|t| {
            if t % 2 == 0 {
                Token::Embedding((0..cfg.dim_in).map(|_| rng.gaussian()).collect())
            } else {
                Token::Symbol(rng.below(cfg.vocab) as u32)
            }
        })
        .collect();
    TokenSeq { tokens, targets: vec![SeqTarget { position: len - 1, symbol: rng.below(cfg.v_epi) as u32 }] }
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_seq: 8, vocab: 10, v_epi: 4, dim_in: 8 };
    let p = noisy(&cfg, 21, 0.3);
    let mut rng = StreamRng::new(22);
    let batch: Vec<TokenSeq> = (0..3).map(|_| random_seq(&cfg, 5, &mut rng)).collect();
    let (_, g) = loss_and_grad(&p, &batch, HeadMask::Full).unwrap();
    let h = tol::GRAD_STEP;
    let (mut worst, mut checked, mut inert) = (0.0f64, 0usize, 0usize);
    while checked < tol::GRAD_COORDS {
        let i = rng.below(p.len());
        let mut plus = p.clone();
        plus.data[i] += h;
        let mut minus = p.clone();
        minus.data[i] -= h;
        let numeric =
            (lcl_loss(&plus, &batch, HeadMask::Full).unwrap() - lcl_loss(&minus, &batch, HeadMask::Full).unwrap()) / (2.0 * h);
        let scale = g.data[i].abs().max(numeric.abs());
        if scale < 1e-8 {
            inert += 1;
            continue;
        }
        worst = worst.max((g.data[i] - numeric).abs() / scale);
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        2,
        "gradient-correctness",
        worst < tol::GRAD_REL_ERR && secs < tol::GRAD_SECS,
        format!(
            "max relative error {worst:.2e} (< {:e}) over {checked} coordinates ({inert} inert skipped), step {h:e}, f64, {secs:.2}s",
            tol::GRAD_REL_ERR
        ),
    )
}

fn causality() -> Verdict {
    let cfg = RunConfig::default().model_config();
    let p = noisy(&cfg, 31, 0.05);
    let mut rng = StreamRng::new(32);
    let base = random_seq(&cfg, 33, &mut rng);
    let logits = forward(&p, &base).unwrap();
    let v = cfg.vocab;
    let mut mismatches = 0usize;
    let mut worst_sum = 0.0f64;
    let mut rows = 0usize;
    for row in logits.chunks_exact(v) {
        worst_sum = worst_sum.max((softmax(row).iter().sum::<f64>() - 1.0).abs());
        rows += 1;
    }
    for k in [1usize, 2, 9, 20, 32] {
        let mut changed = base.clone();
        for t in k..changed.len() {
            changed.tokens[t] = match &changed.tokens[t] {
                Token::Embedding(e) => Token::Embedding(e.iter().map(|x| x + rng.gaussian()).collect()),
                Token::Symbol(s) => Token::Symbol((s + 1 + rng.below(v - 1) as u32) % v as u32),
            };
        }
        let other = forward(&p, &changed).unwrap();
        mismatches += logits[..k * v].iter().zip(&other[..k * v]).filter(|(a, b)| a != b).count();
        let suffix_moved = logits[k * v..].iter().zip(&other[k * v..]).any(|(a, b)| a != b);
        mismatches += usize::from(!suffix_moved);
        for row in other.chunks_exact(v) {
            worst_sum = worst_sum.max((softmax(row).iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
    }
    Verdict::new(
        3,
        "causality-normalization",
        mismatches == 0 && worst_sum <= tol::SOFTMAX_SUM,
        format!(
            "prefix logits bit-identical under 5 suffix perturbations ({mismatches} mismatches); max |sum softmax - 1| {worst_sum:.1e} over {rows} rows (<= {:e})",
            tol::SOFTMAX_SUM
        ),
    )
}

fn decomposition() -> Verdict {
    let u = ClassUniverse::create(&UniverseParams::default()).unwrap();
    let cfg = RunConfig::default().model_config();
    let p = noisy(&cfg, 41, 0.05);
    let vocab = Vocab { v_epi: cfg.v_epi, n_global: cfg.n_global() };
    let mut rng = StreamRng::new(42);
    let batch: Vec<TokenSeq> = (0..12)
        .map(|i| {
            let pos = ClassId(rng.below(u.n_train()) as u32);
            let neg = ClassId(((pos.0 as usize + 1 + rng.below(u.n_train() - 1)) % u.n_train()) as u32);
            let b = bind_labels(pos, neg, cfg.v_epi, &mut rng).unwrap();
            let e = build_2way_episode(&u, pos, neg, 1 + i, b, &mut rng).unwrap();
            episode_to_tokens(&e, &vocab, cfg.max_seq, i % 3 == 0).unwrap()
        })
        .collect();
    let whole = lcl_loss(&p, &batch, HeadMask::Full).unwrap();
    let singles: f64 =
        batch.iter().map(|s| lcl_loss(&p, std::slice::from_ref(s), HeadMask::Full).unwrap()).sum::<f64>() / batch.len() as f64;
    let diff = (whole - singles).abs();
    Verdict::new(
        4,
        "loss-decomposition",
        diff <= tol::DECOMPOSITION,
        format!(
            "batch loss {whole:.12} vs mean of {} single-episode losses {singles:.12}: |diff| {diff:.1e} (<= {:e})",
            batch.len(),
            tol::DECOMPOSITION
        ),
    )
}

struct Pipeline {
    run: RunDir,
    config: RunConfig,
    stages: BTreeMap<String, StageSummary>,
}

fn rows(run: &RunDir, rel: &str) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(run.path(rel)).with_context(|| format!("reading {rel}"))?;
    parse_report(&text)
}

fn shot_acc(run: &RunDir, stage: &str, shots: usize, oracle: bool) -> Result<f64> {
    rows(run, &format!("reports/{stage}.shots.hard_pairs.csv"))?
        .into_iter()
        .find(|r| r.shots == shots && r.is_oracle() == oracle)
        .map(|r| r.accuracy)
        .with_context(|| format!("{stage} has no {shots}-shot row"))
}

fn zero_shot(run: &RunDir, stage: &str) -> Result<f64> {
    let r = rows(run, &format!("reports/{stage}.zeroshot.csv"))?;
    let acc = model_rows(&r).next().map(|r| r.accuracy);
    acc.context("empty zero-shot report")
}

fn run_pipeline(root: &Path, config: RunConfig, stages: &[Strategy], full: bool) -> Result<Pipeline> {
    let run = RunDir::new(root);
    commands::gen(&run, config.clone(), &GenOptions { force: true, ..Default::default() })?;
    let session = Session::open(run.clone(), None, &[])?;
    let mut done = BTreeMap::new();
    for &s in stages {
        let summary = commands::train_stage(&session, s)?;
        progress(&format!(
            "{}: final loss {:.4}, zero-shot {:.3}, {:.0}s",
            summary.stage, summary.final_loss, summary.zero_shot_accuracy, summary.wall_clock_secs
        ));
        commands::eval(&session, &Target::stage(&run, s))?;
        done.insert(summary.stage.clone(), summary);
    }
    let ablated = if full { stages.to_vec() } else { vec![Strategy::TwoWay] };
    for s in ablated {
        commands::ablate(&session, &Target::stage(&run, s), Ablation::FalseRate)?;
        commands::ablate(&session, &Target::stage(&run, s), Ablation::Position)?;
    }
    commands::report(&run)?;
    Ok(Pipeline { run, config, stages: done })
}

fn lcl_capability(p: &Pipeline) -> Result<Verdict> {
    let acc = shot_acc(&p.run, "2way", 16, false)?;
    let oracle = shot_acc(&p.run, "2way", 16, true)?;
    let universe = ClassUniverse::import(&p.run.path("universe.bin"), Some(p.config.universe.n_train))?;
    let nb = NeighborTable::from_csv(&fs::read_to_string(p.run.path("neighbors.csv"))?, universe.n_classes())?;
    let untrained = Params::init(&p.config.model_config(), p.config.model.seed)?;
    let chance = eval_nshot(
        &untrained,
        &universe,
        &nb,
        16,
        PairProtocol::hard(p.config.eval.pair_budget),
        tol::CHANCE_EPISODES,
        p.config.eval.seed,
    )?
    .accuracy;
    let secs: Vec<f64> = ["pretrain", "2way"].iter().map(|s| p.stages[*s].wall_clock_secs).collect();
    let ok = acc >= tol::LCL_MIN_ACC
        && oracle - acc <= tol::LCL_ORACLE_GAP
        && (chance - tol::CHANCE).abs() <= tol::CHANCE_BAND
        && secs.iter().all(|s| *s <= tol::STAGE_SECS);
    Ok(Verdict::new(
        5,
        "lcl-capability",
        ok,
        format!(
            "2way hard-pairs 16-shot {acc:.3} (>= {}), oracle {oracle:.3} (gap {:.3} <= {}), untrained {chance:.3} (0.50 +- {}), stage time pretrain {:.0}s / 2way {:.0}s (<= {}s)",
            tol::LCL_MIN_ACC,
            oracle - acc,
            tol::LCL_ORACLE_GAP,
            tol::CHANCE_BAND,
            secs[0],
            secs[1],
            tol::STAGE_SECS
        ),
    ))
}

fn false_rate(p: &Pipeline) -> Result<Verdict> {
    let r = rows(&p.run, "reports/2way.false_rate.csv")?;
    let points: Vec<(f64, f64)> =
        model_rows(&r).filter_map(|r| Some((condition_value(&r.condition, "false_rate")?, r.accuracy))).collect();
    let n = model_rows(&r).next().map(|r| r.n).unwrap_or(0);
    let (ok, detail) = false_rate_verdict(&points);
    Ok(Verdict::new(6, "false-rate-trend", ok, format!("{detail}; n={n}/point")))
}

fn random_gain(p: &Pipeline) -> Result<Verdict> {
    let (ok, detail) = random_gain_verdict(shot_acc(&p.run, "2way-random", 2, false)?, shot_acc(&p.run, "2way", 2, false)?);
    Ok(Verdict::new(7, "random-shot-gain", ok, detail))
}

fn plateau(p: &Pipeline) -> Result<Verdict> {
    let a = |s| shot_acc(&p.run, "2way-random", s, false);
    let (ok, detail) = plateau_verdict(a(2)?, a(8)?, a(16)?);
    Ok(Verdict::new(8, "shot-plateau", ok, format!("2way-random {detail}")))
}

fn retention(p: &Pipeline) -> Result<Verdict> {
    let (ok, detail) =
        retention_verdict(zero_shot(&p.run, "pretrain")?, zero_shot(&p.run, "mix")?, zero_shot(&p.run, "2way")?);
    Ok(Verdict::new(9, "zero-shot-retention", ok, detail))
}

fn position(p: &Pipeline) -> Result<Verdict> {
    let r = rows(&p.run, "reports/2way.position.csv")?;
    let baseline = model_rows(&r).find(|r| r.condition == "baseline").map(|r| r.accuracy).context("no baseline row")?;
    let pts: Vec<(f64, f64)> =
        model_rows(&r).filter(|r| r.condition.starts_with("position=")).map(|r| (r.accuracy, r.stderr)).collect();
    let (ok, detail) = position_verdict(baseline, &pts);
    Ok(Verdict::new(11, "position-ablation", ok, format!("2way {detail}")))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Result<Verdict> {
    let mut cfg = RunConfig::default();
    for s in [
        "train.pretrain.iterations=200",
        "train.2way.iterations=20",
        "train.2way-random.iterations=20",
        "train.2way-weight.iterations=20",
        "train.mix.iterations=20",
        "eval.episodes=100",
        "eval.zero_shot_episodes=200",
    ] {
        cfg.set(s)?;
    }
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for d in &dirs {
        run_pipeline(d.path(), cfg.clone(), &Strategy::ALL, true)?;
    }
    let lists: Vec<Vec<PathBuf>> = dirs.iter().map(|d| files_under(d.path())).collect();
    let compared: Vec<&PathBuf> =
        lists[0].iter().filter(|p| !p.to_string_lossy().ends_with(".wallclock.txt")).collect();
    let same_listing = lists[0] == lists[1];
    let differing: Vec<String> = compared
        .iter()
        .filter(|rel| fs::read(dirs[0].path().join(rel)).ok() != fs::read(dirs[1].path().join(rel)).ok())
        .map(|rel| rel.display().to_string())
        .collect();
    let count = |ext: &str| compared.iter().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    Ok(Verdict::new(
        10,
        "determinism",
        same_listing && differing.is_empty() && count("lclc") == 5 && count("svg") == 3,
        format!(
            "two full pipelines (all 5 stages, evals, ablations, report): {} files compared ({} checkpoints, {} csv, {} svg), {} differ{}",
            compared.len(),
            count("lclc"),
            count("csv"),
            count("svg"),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    ))
}

fn pipeline_criteria(all: &mut Vec<Verdict>) {
    const NAMES: [(u8, &str); 6] = [
        (5, "lcl-capability"),
        (6, "false-rate-trend"),
        (7, "random-shot-gain"),
        (8, "shot-plateau"),
        (9, "zero-shot-retention"),
        (11, "position-ablation"),
    ];
    let keep = std::env::var_os("LCL_ACCEPTANCE_DIR").map(PathBuf::from);
    let scratch = tempfile::tempdir().expect("temp dir");
    let root = keep.unwrap_or_else(|| scratch.path().to_path_buf());
    progress(&format!("default pipeline in {}", root.display()));
    let stages = [Strategy::Pretrain, Strategy::TwoWay, Strategy::TwoWayRandom, Strategy::Mix];
    let pipeline = match run_pipeline(&root, RunConfig::default(), &stages, false) {
        Ok(p) => p,
        Err(e) => {
            for (id, name) in NAMES {
                emit(Verdict::new(id, name, false, format!("default pipeline failed: {e:#}")), all);
            }
            return;
        }
    };
    type Check = fn(&Pipeline) -> Result<Verdict>;
    let checks: [Check; 6] = [lcl_capability, false_rate, random_gain, plateau, retention, position];
    for ((id, name), check) in NAMES.into_iter().zip(checks) {
        let v = check(&pipeline).unwrap_or_else(|e| Verdict::new(id, name, false, format!("error: {e:#}")));
        emit(v, all);
    }
}

fn main() {
    let start = Instant::now();
    let mut all = Vec::new();
    emit(sampling_laws(), &mut all);
    emit(gradient_check(), &mut all);
    emit(causality(), &mut all);
    emit(decomposition(), &mut all);
    pipeline_criteria(&mut all);
    emit(determinism().unwrap_or_else(|e| Verdict::new(10, "determinism", false, format!("error: {e:#}"))), &mut all);
    all.sort_by_key(|v| v.id);
    let failed: Vec<String> = all.iter().filter(|v| !v.passed).map(|v| v.id.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        all.len() - failed.len(),
        all.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
