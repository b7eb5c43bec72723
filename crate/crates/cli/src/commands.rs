//! The subcommands as library functions over a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lcl_core::eval::{ablate_false_rate, ablate_position, eval_zeroshot, shot_sweep, EvalReport};
use lcl_core::neighbors::NeighborTable;
use lcl_core::net::checkpoint::{decode, encode};
use lcl_core::net::Params;
use lcl_core::train::{
    finetune_random, finetune_weighted, pretrain_zeroshot, train_2way, train_mix, Strategy, TrainContext,
};
use lcl_core::ClassUniverse;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::reports::{self, parse_report, report_csv, StageReports};
use crate::rundir::{Meta, RunDir, CONFIG, NEIGHBORS, UNIVERSE};

const GEN_HINT: &str = "run `lcl gen` first";

/// A run directory together with the effective configuration.
pub struct Session {
    pub run: RunDir,
    pub config: RunConfig,
}

pub fn read_config_file(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MissingInput {
        path: path.to_path_buf(),
        hint: format!("cannot read config: {e}"),
    })?;
    RunConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
}

/// Config for `gen`: the given file or the defaults, then overrides.
pub fn gen_config(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => read_config_file(p)?,
        None => RunConfig::default(),
    };
    for s in sets {
        cfg.set(s)?;
    }
    Ok(cfg)
}

impl Session {
    /// Opens an existing run. The base config is `file` when given and the
    /// run snapshot otherwise; the universe and neighbor sections must agree
    /// with the snapshot because the stored data was built from them.
    pub fn open(run: RunDir, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let snapshot = read_config_file(&run.require(CONFIG, GEN_HINT)?)?;
        let mut config = match file {
            Some(p) => read_config_file(p)?,
            None => snapshot.clone(),
        };
        for s in sets {
            config.set(s)?;
        }
        if config.universe != snapshot.universe || config.neighbors != snapshot.neighbors {
            return Err(CliError::Config(
                "universe/neighbors settings differ from the run snapshot; rerun `lcl gen --force`".into(),
            )
            .into());
        }
        Ok(Session { run, config })
    }

    fn meta(&self, seed: u64) -> Meta {
        Meta { config_hash: self.config.hash(), seed }
    }

    /// Stores the effective config under `configs/<hash>.toml` when it is
    /// not the snapshot, so every recorded hash resolves to a file.
    fn record_config(&self) -> Result<()> {
        let snapshot = read_config_file(&self.run.path(CONFIG))?;
        if snapshot.hash() != self.config.hash() {
            let rel = format!("configs/{}.toml", self.config.hash());
            self.run.write_recorded(&rel, config_text(&self.config).as_bytes(), &self.meta(self.config.eval.seed))?;
        }
        Ok(())
    }

    fn universe(&self) -> Result<ClassUniverse> {
        let path = self.run.require(UNIVERSE, GEN_HINT)?;
        Ok(ClassUniverse::import(&path, Some(self.config.universe.n_train))?)
    }

    fn neighbors(&self, universe: &ClassUniverse) -> Result<NeighborTable> {
        let text = self.run.read_text(NEIGHBORS, GEN_HINT)?;
        Ok(NeighborTable::from_csv(&text, universe.n_classes())?)
    }
}

fn config_text(cfg: &RunConfig) -> String {
    format!("# config_hash={} seed={}\n{}", cfg.hash(), cfg.universe.seed, cfg.to_toml())
}

#[derive(Clone, Debug, Default)]
pub struct GenOptions {
    pub force: bool,
    pub import: Option<PathBuf>,
    pub export: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub n_classes: usize,
    pub n_train: usize,
    pub config_hash: String,
}

/// Builds (or imports) the universe and the neighbor cache.
pub fn gen(run: &RunDir, mut cfg: RunConfig, opts: &GenOptions) -> Result<GenSummary> {
    if run.holds_run() && !opts.force {
        return Err(CliError::Exists(run.root().to_path_buf()).into());
    }
    let _lock = run.lock()?;
    run.clear()?;
    let universe = match &opts.import {
        Some(path) => {
            let probe = ClassUniverse::import(path, None)?;
            let u = if cfg.universe.n_train + cfg.universe.n_holdout == probe.n_classes() {
                ClassUniverse::import(path, Some(cfg.universe.n_train))?
            } else {
                probe
            };
            cfg.universe.n_train = u.n_train();
            cfg.universe.n_holdout = u.n_holdout();
            cfg.universe.dim = u.dim();
            cfg.universe.sigma_img = u.sigma_img();
            cfg.validate()?;
            u
        }
        None => ClassUniverse::create(&cfg.universe_params())?,
    };
    let meta = Meta { config_hash: cfg.hash(), seed: cfg.universe.seed };
    run.write_recorded(CONFIG, config_text(&cfg).as_bytes(), &meta)?;
    let mut bytes = Vec::new();
    universe.write_to(&mut bytes)?;
    run.write_recorded(UNIVERSE, &bytes, &meta)?;
    let table = NeighborTable::build(&universe, &cfg.neighbor_config()?)?;
    run.write_csv(NEIGHBORS, &table.to_csv(), &Meta { seed: cfg.neighbors.seed, ..meta })?;
    if let Some(path) = &opts.export {
        universe.export(path).with_context(|| format!("exporting to {}", path.display()))?;
    }
    Ok(GenSummary { n_classes: universe.n_classes(), n_train: universe.n_train(), config_hash: cfg.hash() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: String,
    pub final_loss: f64,
    pub zero_shot_accuracy: f64,
    pub wall_clock_secs: f64,
}

/// Trains one stage from its prerequisite checkpoint.
pub fn train_stage(s: &Session, strategy: Strategy) -> Result<StageSummary> {
    let stage = strategy.stage_name();
    let _lock = s.run.lock()?;
    s.record_config()?;
    let tc = s.config.train_config(strategy)?;
    let universe = s.universe()?;
    let base = match strategy.prerequisite() {
        None => None,
        Some(pre) => {
            let rel = RunDir::checkpoint_rel(pre.stage_name());
            let path = s.run.path(&rel);
            if !path.exists() {
                return Err(CliError::Dependency { stage: stage.into(), needs: pre.stage_name().into(), path }.into());
            }
            Some(load_params(&path)?)
        }
    };
    let neighbors = match strategy {
        Strategy::Pretrain => None,
        _ => Some(s.neighbors(&universe)?),
    };
    let ctx = TrainContext { universe: &universe, neighbors: neighbors.as_ref() };
    let out = match (strategy, base) {
        (Strategy::Pretrain, _) => pretrain_zeroshot(&s.config.model_config(), s.config.model.seed, &ctx, &tc),
        (Strategy::TwoWay, Some(p)) => train_2way(p, &ctx, &tc),
        (Strategy::TwoWayRandom, Some(p)) => finetune_random(p, &ctx, &tc),
        (Strategy::TwoWayWeight, Some(p)) => finetune_weighted(p, &ctx, &tc),
        (Strategy::Mix, Some(p)) => train_mix(p, &ctx, &tc),
        (_, None) => unreachable!("every fine-tuning stage has a prerequisite"),
    }
    .with_context(|| format!("training {stage}"))?;

    let meta = s.meta(tc.seed);
    s.run.write_recorded(&RunDir::checkpoint_rel(stage), &encode(&out.params, Some(&out.state)), &meta)?;
    s.run.write_csv(&format!("metrics/{stage}.csv"), &out.log.to_csv(), &meta)?;
    s.run.write_csv(&format!("metrics/{stage}_snapshots.csv"), &out.log.snapshots_csv(), &meta)?;
    let zs = eval_zeroshot(&out.params, &universe, s.config.eval.zero_shot_episodes, s.config.eval.seed)?;
    let summary = format!(
        "stage,iterations,final_loss,zero_shot_accuracy,zero_shot_n\n{stage},{},{:.6},{:.6},{}\n",
        tc.iterations, out.log.final_loss, zs.accuracy, zs.n
    );
    s.run.write_csv(&format!("metrics/{stage}_summary.csv"), &summary, &meta)?;
    let clock = format!("{}wall_clock_secs={:.3}\n", meta.header_line(), out.log.wall_clock_secs);
    s.run.write_unrecorded(&format!("metrics/{stage}.wallclock.txt"), clock.as_bytes())?;
    Ok(StageSummary {
        stage: stage.into(),
        final_loss: out.log.final_loss,
        zero_shot_accuracy: zs.accuracy,
        wall_clock_secs: out.log.wall_clock_secs,
    })
}

pub fn load_params(path: &Path) -> Result<Params> {
    let bytes = fs::read(path).map_err(|e| CliError::MissingInput {
        path: path.to_path_buf(),
        hint: format!("cannot read checkpoint: {e}"),
    })?;
    let (params, _, _) = decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    Ok(params)
}

/// A checkpoint to evaluate and the name its reports are filed under.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub name: String,
    pub checkpoint: PathBuf,
}

impl Target {
    pub fn stage(run: &RunDir, strategy: Strategy) -> Self {
        Target {
            name: strategy.stage_name().into(),
            checkpoint: run.path(&RunDir::checkpoint_rel(strategy.stage_name())),
        }
    }

    fn load(&self) -> Result<Params> {
        if !self.checkpoint.exists() {
            return Err(CliError::MissingInput {
                path: self.checkpoint.clone(),
                hint: format!("run `lcl train {}` first", self.name),
            }
            .into());
        }
        load_params(&self.checkpoint)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    FalseRate,
    Position,
    Shots,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "false-rate" => Some(Ablation::FalseRate),
            "position" => Some(Ablation::Position),
            "shots" => Some(Ablation::Shots),
            _ => None,
        }
    }
}

fn write_report(s: &Session, rel: &str, report: &EvalReport) -> Result<String> {
    s.run.write_csv(rel, &report_csv(report), &s.meta(report.seed))?;
    Ok(rel.to_string())
}

fn shot_reports(
    s: &Session,
    t: &Target,
    p: &Params,
    universe: &ClassUniverse,
    nb: &NeighborTable,
) -> Result<Vec<String>> {
    let e = &s.config.eval;
    s.config
        .protocols()?
        .into_iter()
        .map(|protocol| {
            let report = shot_sweep(p, universe, nb, protocol, &e.shots, e.episodes, e.seed)?;
            write_report(s, &format!("reports/{}.shots.{}.csv", t.name, protocol.name()), &report)
        })
        .collect()
}

/// Shot sweeps for every configured protocol plus zero-shot accuracy.
/// Returns the written report paths relative to the run directory.
pub fn eval(s: &Session, t: &Target) -> Result<Vec<String>> {
    let _lock = s.run.lock()?;
    s.record_config()?;
    let p = t.load()?;
    let universe = s.universe()?;
    let nb = s.neighbors(&universe)?;
    let mut written = shot_reports(s, t, &p, &universe, &nb)?;
    let e = &s.config.eval;
    let zs = eval_zeroshot(&p, &universe, e.zero_shot_episodes, e.seed)?;
    let report = EvalReport { experiment: "zero_shot".into(), seed: e.seed, entries: vec![zs] };
    written.push(write_report(s, &format!("reports/{}.zeroshot.csv", t.name), &report)?);
    Ok(written)
}

/// One ablation curve; the false-rate and position ablations use the first
/// configured protocol.
pub fn ablate(s: &Session, t: &Target, which: Ablation) -> Result<Vec<String>> {
    let _lock = s.run.lock()?;
    s.record_config()?;
    let p = t.load()?;
    let universe = s.universe()?;
    let nb = s.neighbors(&universe)?;
    let e = &s.config.eval;
    let protocol = s.config.protocols()?[0];
    Ok(match which {
        Ablation::Shots => shot_reports(s, t, &p, &universe, &nb)?,
        Ablation::FalseRate => {
            let r = ablate_false_rate(&p, &universe, &nb, protocol, e.ablation_shots, &e.false_rates, e.episodes, e.seed)?;
            vec![write_report(s, &format!("reports/{}.false_rate.csv", t.name), &r)?]
        }
        Ablation::Position => {
            let r = ablate_position(&p, &universe, &nb, protocol, e.ablation_shots, e.episodes, e.seed)?;
            vec![write_report(s, &format!("reports/{}.position.csv", t.name), &r)?]
        }
    })
}

fn read_rows(run: &RunDir, rel: &str) -> Result<Option<Vec<reports::ReportRow>>> {
    let p = run.path(rel);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Some(parse_report(&text).with_context(|| format!("parsing {}", p.display()))?))
}

fn read_final_loss(run: &RunDir, stage: &str) -> Result<Option<f64>> {
    let p = run.path(&format!("metrics/{stage}_summary.csv"));
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let row = text.lines().filter(|l| !l.starts_with('#')).nth(1);
    let loss = row.and_then(|r| r.split(',').nth(2)).and_then(|v| v.parse().ok());
    Ok(loss)
}

/// Gathers every stage's reports from the run directory.
pub fn collect(run: &RunDir, protocols: &[String]) -> Result<Vec<StageReports>> {
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let name = strategy.stage_name();
        let mut st = StageReports { name: name.into(), ..Default::default() };
        for p in protocols {
            if let Some(rows) = read_rows(run, &format!("reports/{name}.shots.{p}.csv"))? {
                st.shots.push((p.clone(), rows));
            }
        }
        st.zero_shot = read_rows(run, &format!("reports/{name}.zeroshot.csv"))?
            .and_then(|rows| reports::model_rows(&rows).next().map(|r| r.accuracy));
        st.false_rate = read_rows(run, &format!("reports/{name}.false_rate.csv"))?;
        st.position = read_rows(run, &format!("reports/{name}.position.csv"))?;
        let has_reports = !st.shots.is_empty() || st.zero_shot.is_some() || st.false_rate.is_some() || st.position.is_some();
        if has_reports {
            st.final_loss = read_final_loss(run, name)?;
            out.push(st);
        }
    }
    Ok(out)
}

/// Summary table and the three plots. Reads only files in the run
/// directory, so reruns reproduce the same bytes.
pub fn report(run: &RunDir) -> Result<Vec<String>> {
    let _lock = run.lock()?;
    let cfg = read_config_file(&run.require(CONFIG, GEN_HINT)?)?;
    let stages = collect(run, &cfg.eval.protocols)?;
    if stages.is_empty() {
        return Err(CliError::MissingInput {
            path: run.path("reports"),
            hint: "no evaluation reports; run `lcl eval <stage>` or `lcl ablate <stage>` first".into(),
        }
        .into());
    }
    let meta = Meta { config_hash: cfg.hash(), seed: cfg.eval.seed };
    let mut written = vec!["reports/summary.csv".to_string()];
    run.write_csv(&written[0], &reports::summary_csv(&stages), &meta)?;
    let comment = meta.header_line().trim_start_matches("# ").trim_end().to_string();
    for (rel, (chart, series)) in [
        ("plots/shots.svg", reports::shots_chart(&stages)),
        ("plots/false_rate.svg", reports::false_rate_chart(&stages)),
        ("plots/position.svg", reports::position_chart(&stages)),
    ] {
        run.write_recorded(rel, chart.render(&series, &comment).as_bytes(), &meta)?;
        written.push(rel.to_string());
    }
    Ok(written)
}
