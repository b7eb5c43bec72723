use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use lcl_cli::commands::{self, Ablation, GenOptions, Session, Target};
use lcl_cli::{exit_code, rundir, RunDir};
use lcl_core::train::Strategy;

#[derive(Parser)]
#[command(name = "lcl", version, about = "Link-context learning pipeline on synthetic embedding classes")]
struct Cli {
    /// Run directory (default: config output_dir, then $LCL_RUN_ROOT/default, then runs/default)
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// TOML config file; later commands default to the run's snapshot
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set train.2way.iterations=500
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrain,
    #[value(name = "2way")]
    TwoWay,
    #[value(name = "2way-random")]
    TwoWayRandom,
    #[value(name = "2way-weight")]
    TwoWayWeight,
    Mix,
}

impl From<StageArg> for Strategy {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pretrain => Strategy::Pretrain,
            StageArg::TwoWay => Strategy::TwoWay,
            StageArg::TwoWayRandom => Strategy::TwoWayRandom,
            StageArg::TwoWayWeight => Strategy::TwoWayWeight,
            StageArg::Mix => Strategy::Mix,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    FalseRate,
    Position,
    Shots,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the class universe and neighbor cache
    Gen {
        /// Replace an existing run in the directory
        #[arg(long)]
        force: bool,
        /// Ingest a universe binary instead of generating one
        #[arg(long, value_name = "PATH")]
        import: Option<PathBuf>,
        /// Also write the universe binary to PATH
        #[arg(long, value_name = "PATH")]
        export: Option<PathBuf>,
    },
    /// Train the zero-shot base model (same as `train pretrain`)
    Pretrain,
    /// Train one stage from its prerequisite checkpoint
    Train {
        #[arg(value_enum)]
        stage: StageArg,
    },
    /// Shot sweeps per protocol and zero-shot accuracy
    Eval {
        #[arg(value_enum, required_unless_present = "checkpoint")]
        stage: Option<StageArg>,
        /// Evaluate this checkpoint file instead of a stage's
        #[arg(long, requires = "name", conflicts_with = "stage")]
        checkpoint: Option<PathBuf>,
        /// Report name for --checkpoint
        #[arg(long)]
        name: Option<String>,
    },
    /// False-rate, position or shot-count ablation curves
    Ablate {
        #[arg(value_enum)]
        stage: StageArg,
        #[arg(long, value_enum)]
        which: WhichArg,
    },
    /// Summary table over all stages and the SVG plots
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let flag = cli.run_dir.as_deref();
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen { force, import, export } => {
            let cfg = commands::gen_config(config, &cli.sets)?;
            let run = RunDir::new(rundir::resolve(flag, &cfg.output_dir));
            let s = commands::gen(&run, cfg, &GenOptions { force, import, export })?;
            println!(
                "{}: {} classes ({} train), config {}",
                run.root().display(),
                s.n_classes,
                s.n_train,
                s.config_hash
            );
        }
        Command::Report => {
            let out_dir = match config {
                Some(p) if flag.is_none() => commands::read_config_file(p)?.output_dir,
                _ => String::new(),
            };
            let run = RunDir::new(rundir::resolve(flag, &out_dir));
            for rel in commands::report(&run)? {
                println!("{}", run.path(&rel).display());
            }
        }
        cmd => {
            let out_dir = match config {
                Some(p) if flag.is_none() => commands::read_config_file(p)?.output_dir,
                _ => String::new(),
            };
            let run = RunDir::new(rundir::resolve(flag, &out_dir));
            let s = Session::open(run, config, &cli.sets)?;
            match cmd {
                Command::Pretrain => print_stage(&commands::train_stage(&s, Strategy::Pretrain)?),
                Command::Train { stage } => print_stage(&commands::train_stage(&s, stage.into())?),
                Command::Eval { stage, checkpoint, name } => {
                    let target = match (stage, checkpoint, name) {
                        (Some(st), _, _) => Target::stage(&s.run, st.into()),
                        (None, Some(checkpoint), Some(name)) => Target { name, checkpoint },
                        _ => unreachable!("clap enforces a stage or --checkpoint with --name"),
                    };
                    print_written(&s, &commands::eval(&s, &target)?);
                }
                Command::Ablate { stage, which } => {
                    let which = match which {
                        WhichArg::FalseRate => Ablation::FalseRate,
                        WhichArg::Position => Ablation::Position,
                        WhichArg::Shots => Ablation::Shots,
                    };
                    let target = Target::stage(&s.run, stage.into());
                    print_written(&s, &commands::ablate(&s, &target, which)?);
                }
                Command::Gen { .. } | Command::Report => unreachable!("handled above"),
            }
        }
    }
    Ok(())
}

fn print_stage(s: &commands::StageSummary) {
    println!(
        "{}: final loss {:.4}, zero-shot accuracy {:.3}, {:.1}s",
        s.stage, s.final_loss, s.zero_shot_accuracy, s.wall_clock_secs
    );
}

fn print_written(s: &Session, written: &[String]) {
    for rel in written {
        println!("{}", s.run.path(rel).display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
