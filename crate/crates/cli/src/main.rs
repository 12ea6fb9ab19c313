//! `dre`: train, evaluate and inspect the trigger-guided relation extractor.
//!
//! Exit status is 0 on success, 1 when inputs or configuration are invalid,
//! and 2 when a run fails (I/O, divergence, a failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<dre::Error> for Failure {
    fn from(e: dre::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "dre", version, about = "Dialogue relation extraction with trigger spans and label knowledge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write (train) or read (eval, predict).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides `paths.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for training shuffles and initialization, or for the generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus logs.
    Train(Common),
    /// Score a checkpoint with macro F1 and prefix F1_c.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Which configured data file to score.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Predict a relation and trigger for every argument pair in a file.
    Predict {
        #[command(flatten)]
        common: Common,
        /// DialogRE-format input; labels are optional.
        #[arg(long)]
        input: PathBuf,
    },
    /// Compare analytic gradients with central differences on a tiny instance.
    Gradcheck(Common),
    /// Write a synthetic corpus with planted trigger phrases.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        size: usize,
        /// Fraction of instances whose trigger follows the argument prefix.
        #[arg(long)]
        evidence_after_prefix: Option<f64>,
    },
}

fn resolve(common: &Common, command: &str) -> Result<RunConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        if command != "synth" {
            overrides.push(format!("train.seed={seed}"));
            overrides.push(format!("encoder.seed={seed}"));
        }
    }
    let mut config = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(out) = &common.out {
        config.paths.output_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(common) => commands::train(&resolve(&common, "train")?, common.checkpoint.as_deref()),
        Command::Eval { common, split } => commands::eval(&resolve(&common, "eval")?, common.checkpoint.as_deref(), &split),
        Command::Predict { common, input } => {
            commands::predict_file(&resolve(&common, "predict")?, common.checkpoint.as_deref(), &input)
        }
        Command::Gradcheck(common) => {
            if commands::gradcheck(&resolve(&common, "gradcheck")?)? {
                Ok(())
            } else {
                Err(Failure::Runtime("gradient check failed".into()))
            }
        }
        Command::Synth {
            common,
            size,
            evidence_after_prefix,
        } => {
            let config = resolve(&common, "synth")?;
            commands::synth(&config, common.seed.unwrap_or(0), size, evidence_after_prefix)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
