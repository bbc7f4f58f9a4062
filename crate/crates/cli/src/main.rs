mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subitize::metrics::BaselineKind;
use subitize::models::ModelKind;
use subitize::{Error, Result};

use config::{load_config, AnalyzeRun, BoostRun, EvalRun, Grid, QaRun, SynthRun, TrainRun, TuneRun};

/// Train and evaluate object counters on synthetic scenes.
#[derive(Parser)]
#[command(name = "subitize", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config, or the run.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid size, e.g. 3x3.
    #[arg(long)]
    grid: Option<Grid>,
    /// glance, aso-sub, seq-sub or gt-class.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl Common {
    fn reject(&self, command: &str, seed: bool, grid: bool, model: bool) -> Result<()> {
        let unused = [
            (self.seed.is_some() && !seed, "--seed"),
            (self.grid.is_some() && !grid, "--grid"),
            (self.model.is_some() && !model, "--model"),
        ];
        match unused.iter().find(|(bad, _)| *bad) {
            Some((_, flag)) => Err(Error::InvalidArgument(format!("{flag} does not apply to {command}"))),
            None => Ok(()),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of scenes.
    #[arg(long)]
    scenes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; repeat to ensemble.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// always-0, mean, always-1 or category-mean.
    #[arg(long)]
    baseline: Option<BaselineKind>,
    /// Raw counts to score instead of a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct PredArgs {
    #[command(flatten)]
    common: Common,
    /// predictions.json written by `eval`.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pred: PredArgs,
    /// Checkpoint for occlusion maps.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with features, detections and questions.
    Synth(SynthArgs),
    /// Train a counting model.
    Train(Common),
    /// Evaluate checkpoints or a baseline.
    Eval(EvalArgs),
    /// Tune per-category detection thresholds.
    TuneDet(Common),
    /// Compare fixed and count-guided detection thresholds.
    BoostDet(PredArgs),
    /// Answer counting questions from predicted counts.
    Qa(PredArgs),
    /// Error profile, bias statistics and occlusion maps.
    Analyze(AnalyzeArgs),
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let c = &a.common;
            c.reject("synth", true, false, false)?;
            let mut cfg: SynthRun = load_config(c.config.as_deref(), "synth")?;
            if let Some(seed) = c.seed {
                cfg.synth.seed = seed;
            }
            if let Some(n) = a.scenes {
                cfg.synth.scene_count = n;
            }
            let out = c.data_dir.clone().unwrap_or_else(|| c.out_dir.clone());
            commands::synth(&cfg, &out)
        }
        Command::Train(c) => {
            c.reject("train", true, true, true)?;
            let mut cfg: TrainRun = load_config(c.config.as_deref(), "train")?;
            if let Some(seed) = c.seed {
                cfg.train.seed = seed;
            }
            if let Some(grid) = c.grid {
                cfg.grid = grid;
            }
            if let Some(model) = c.model {
                cfg.model = model;
            }
            if let Some(d) = &c.data_dir {
                cfg.data_dir = d.clone();
            }
            commands::train_cmd(&cfg, &c.out_dir)
        }
        Command::Eval(a) => {
            let c = &a.common;
            c.reject("eval", true, false, false)?;
            let mut cfg: EvalRun = load_config(c.config.as_deref(), "eval")?;
            if let Some(seed) = c.seed {
                cfg.seed = seed;
            }
            if let Some(d) = &c.data_dir {
                cfg.data_dir = d.clone();
            }
            if !a.checkpoints.is_empty() || a.baseline.is_some() || a.predictions.is_some() {
                cfg.checkpoints = a.checkpoints;
                cfg.baseline = a.baseline;
                cfg.predictions = a.predictions;
            }
            commands::eval_cmd(&cfg, &c.out_dir)
        }
        Command::TuneDet(c) => {
            c.reject("tune-det", false, false, false)?;
            let mut cfg: TuneRun = load_config(c.config.as_deref(), "tune-det")?;
            if let Some(d) = &c.data_dir {
                cfg.data_dir = d.clone();
            }
            commands::tune_det(&cfg, &c.out_dir)
        }
        Command::BoostDet(a) => {
            a.common.reject("boost-det", false, false, false)?;
            let mut cfg: BoostRun = load_config(a.common.config.as_deref(), "boost-det")?;
            if let Some(d) = &a.common.data_dir {
                cfg.data_dir = d.clone();
            }
            if let Some(p) = a.predictions {
                cfg.predictions = p;
            }
            commands::boost_det(&cfg, &a.common.out_dir)
        }
        Command::Qa(a) => {
            a.common.reject("qa", false, false, false)?;
            let mut cfg: QaRun = load_config(a.common.config.as_deref(), "qa")?;
            if let Some(d) = &a.common.data_dir {
                cfg.data_dir = d.clone();
            }
            if let Some(p) = a.predictions {
                cfg.predictions = p;
            }
            commands::qa_cmd(&cfg, &a.common.out_dir)
        }
        Command::Analyze(a) => {
            let c = &a.pred.common;
            c.reject("analyze", false, true, false)?;
            let mut cfg: AnalyzeRun = load_config(c.config.as_deref(), "analyze")?;
            if let Some(d) = &c.data_dir {
                cfg.data_dir = d.clone();
            }
            if let Some(p) = a.pred.predictions {
                cfg.predictions = p;
            }
            if let Some(p) = a.checkpoint {
                cfg.checkpoint = Some(p);
            }
            if let Some(g) = c.grid {
                if g.rows != g.cols {
                    return Err(Error::InvalidArgument("occlusion masks need a square grid".into()));
                }
                cfg.mask_grid = g.rows;
            }
            commands::analyze(&cfg, &c.out_dir)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Resolution(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
