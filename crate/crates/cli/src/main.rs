//! `spear`: the pipeline stages as subcommands.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. Errors are reported as one `error[<class>]: <message>` line on
//! stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spear::config::{Overrides, RunConfig};
use spear::error::ErrorClass;
use spear::pipeline::{run_stage, Precision, Stage};
use spear::SpearError;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "spear", version, about = "Soft-prompt anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON). Every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Overrides the top-level seed; nested seeds are re-derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run the model in 64-bit floating point.
    #[arg(long, global = true)]
    f64: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its ground truth.
    Synth,
    /// Label series with the statistical anomaly detectors.
    Label,
    /// Balance the training windows by minority oversampling.
    Resample,
    /// Train soft prompts (and head) and write a checkpoint plus epoch log.
    Train,
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        /// Checkpoint to load (default: <output_dir>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score every window with a checkpoint.
    Predict {
        /// Checkpoint to load (default: <output_dir>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per configured prompt size.
    Ablate,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

fn run(cli: Cli) -> Result<(), SpearError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SpearError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SpearError::Config(format!("cannot size worker pool: {e}")))?;
    }
    let overrides = Overrides {
        seed: cli.seed,
        output_dir: cli.output_dir,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let precision = if cli.f64 { Precision::F64 } else { Precision::F32 };
    let (stage, checkpoint) = match cli.command {
        Command::Synth => (Stage::Synth, None),
        Command::Label => (Stage::Label, None),
        Command::Resample => (Stage::Resample, None),
        Command::Train => (Stage::Train, None),
        Command::Eval { checkpoint } => (Stage::Eval, checkpoint),
        Command::Predict { checkpoint } => (Stage::Predict, checkpoint),
        Command::Ablate => (Stage::Ablate, None),
    };
    run_stage(stage, &cfg, precision, checkpoint.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SPEAR_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", class_name(class));
            ExitCode::from(exit_code(class))
        }
    }
}
