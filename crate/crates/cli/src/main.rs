use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tweetsift_cli::pipeline::{self, ensure_prepared, write_manifest, Side};
use tweetsift_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "tweetsift", version, about = "Disaster-tweet classification benchmark")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, deduplicate and split the dataset.
    Prepare,
    /// Train one model on the training split.
    Train {
        #[arg(long)]
        model: String,
    },
    /// Score a trained model; the test split unless `--split train`.
    Evaluate {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train and evaluate the configured models and tabulate them.
    Compare {
        /// Replaces the config's model list; repeatable.
        #[arg(long)]
        model: Vec<String>,
    },
    /// Write test-split ROC points for a trained model.
    Roc {
        #[arg(long)]
        model: String,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    cfg.validate()?;
    match args.command {
        Command::Prepare => {
            let (_, summary) = pipeline::prepare(&cfg)?;
            eprintln!(
                "{} records ({:.1}% class 0), {} train / {} test; dropped {} empty and {} duplicates",
                summary.dataset.records,
                100.0 * summary.class0_fraction,
                summary.train.records,
                summary.test.records,
                summary.ingest.empty_dropped,
                summary.ingest.duplicate_dropped
            );
        }
        Command::Train { model } => {
            tweetsift_cli::ModelName::parse(&model)?;
            let split = ensure_prepared(&cfg)?;
            pipeline::train(&cfg, &model, &split)?;
            eprintln!("trained {model} -> {}", pipeline::model_dir(&cfg, &model).display());
        }
        Command::Evaluate { model, split } => {
            let data = ensure_prepared(&cfg)?;
            let side = match split {
                SplitArg::Train => Side::Train,
                SplitArg::Test => Side::Test,
            };
            let r = pipeline::evaluate(&cfg, &model, &data, side)?;
            eprintln!("{model} on {}: accuracy {:.4}, macro F1 {:.4}, AUC {:.4}", side.name(), r.accuracy, r.macro_avg.f1, r.auc);
        }
        Command::Compare { model } => {
            if !model.is_empty() {
                cfg.compare.models = model;
                cfg.validate()?;
            }
            let split = ensure_prepared(&cfg)?;
            let table = pipeline::compare(&cfg, &split)?;
            print!("{}", table.render());
        }
        Command::Roc { model } => {
            let split = ensure_prepared(&cfg)?;
            let r = pipeline::roc(&cfg, &model, &split)?;
            eprintln!("{model}: AUC {:.4} over {} points", r.auc, r.roc_points.len());
        }
    }
    write_manifest(&cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
