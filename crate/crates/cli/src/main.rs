//! `simreweight`: simulate, train, reweight, evaluate and ablate.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simreweight_core::eval::Variant;
use simreweight_core::reweighter::PlaneOffset;
use simreweight_core::trainer::WeightingMode;
use simreweight_core::Task;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "simreweight",
    version,
    about = "Sim-to-real multi-task traffic forecasting with bilevel sample reweighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Recompute outputs that already exist instead of skipping.
    #[arg(long)]
    force: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the simulated pool and the real environment as a dataset bundle.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Simulator seed (overrides simulator.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the multi-task model on the simulated split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seed (overrides train.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        weighting: Option<WeightingMode>,
        /// Train a single-task model for this task.
        #[arg(long)]
        single_task: Option<Task>,
        /// `uniform` or a weights CSV written by `reweight`.
        #[arg(long, default_value = "uniform")]
        sample_weights: String,
    },
    /// Learn sample weights with the bilevel solver, starting from a
    /// pretrained checkpoint or from a fresh uniform pretraining run.
    Reweight {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretrained checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plane_offset: Option<PlaneOffset>,
        #[arg(long)]
        retrain_with_weights: bool,
    },
    /// Score a checkpoint on the validation and test splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics report (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock time in the report (breaks byte reproducibility).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        force: bool,
    },
    /// Run the ablation matrix over variants and seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds (overrides eval.seeds).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated variants (overrides eval.variants).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        timing: bool,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Seeds of the end-to-end check.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Parameter coordinates checked per end-to-end seed.
        #[arg(long, default_value_t = 20)]
        coords: usize,
        /// Maximum relative error accepted.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { cfg, out, seed } => {
            let mut run = cfg.load()?;
            if let Some(s) = seed {
                run.simulator.seed = s;
            }
            commands::simulate(&run, &out, cfg.force)
        }
        Command::Train { cfg, data, out, seed, weighting, single_task, sample_weights } => {
            let mut run = cfg.load()?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(w) = weighting {
                run.train.weighting_mode = w;
            }
            if single_task.is_some() {
                run.model.single_task = single_task;
            }
            run.validate()?;
            commands::train(&run, &data, &out, &sample_weights, cfg.force)
        }
        Command::Reweight { cfg, data, out, checkpoint, seed, plane_offset, retrain_with_weights } => {
            let mut run = cfg.load()?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(p) = plane_offset {
                run.reweight.plane_offset = p;
            }
            run.reweight.retrain_with_weights |= retrain_with_weights;
            commands::reweight(&run, &data, &out, checkpoint.as_deref(), cfg.force)
        }
        Command::Evaluate { checkpoint, data, out, timing, force } => {
            commands::evaluate(&checkpoint, &data, &out, timing, force)
        }
        Command::Ablate { cfg, data, out, seeds, variants, jobs, timing } => {
            let mut run = cfg.load()?;
            if let Some(s) = seeds {
                run.eval.seeds = s;
            }
            if let Some(v) = variants {
                run.eval.variants = v;
            }
            run.validate()?;
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be positive".into()));
            }
            commands::ablate(&run, &data, &out, jobs, timing, cfg.force)
        }
        Command::Gradcheck { seeds, step, coords, tolerance } => commands::gradcheck(seeds, step, coords, tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIMREWEIGHT_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
