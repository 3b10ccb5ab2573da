//! `cmf` — end-to-end pipeline and prediction service front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmf_core::Facility;

#[derive(Debug, Parser)]
#[command(name = "cmf", version, about = "Predict crash modification factors from countermeasure scenarios")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Config file (`key = value` lines or a flat JSON object).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Restrict the command to one facility type.
    #[arg(long, global = true, value_parser = parse_facility)]
    pub facility: Option<Facility>,

    /// Artifact directory; overrides the config file and CMF_ARTIFACTS.
    #[arg(long, global = true)]
    pub artifacts: Option<PathBuf>,
}

fn parse_facility(s: &str) -> Result<Facility, String> {
    Facility::from_label(s).ok_or_else(|| format!("unknown facility `{s}` (expected roadway or intersection)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Fine-tuned backbone, re-tuned inside every outer fold.
    FineTuned,
    /// Backbone used as is.
    NonTuning,
    /// 10-nearest-neighbour baseline over the categorical fields.
    Knn,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a clearinghouse CSV export (or generate synthetic data).
    Ingest {
        /// CSV export to read.
        #[arg(long, required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// JSON column mapping; defaults to the clearinghouse headers.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Generate this many synthetic records per facility instead.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<usize>,
    },
    /// Sample labelled scenario pairs for fine-tuning.
    Pairs,
    /// Fine-tune the sentence encoder on the sampled pairs.
    Finetune,
    /// Fit the predictor on all ingested records.
    Train {
        /// Use the untuned backbone even when it is trainable.
        #[arg(long)]
        frozen: bool,
    },
    /// Nested cross-validation; writes a report bundle.
    Evaluate {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
    },
    /// Subgroup tables and the structured-countermeasure case study.
    Report {
        /// Which evaluation to read (fine-tuned, non-tuning or knn).
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Comma-separated grouping fields.
        #[arg(long, value_delimiter = ',')]
        by: Vec<String>,
        /// Also write the shoulder-width case study.
        #[arg(long)]
        case_study: bool,
    },
    /// Predict from a JSON request (object or array; `-` reads stdin).
    Predict {
        #[arg(long)]
        json: PathBuf,
        /// Ask a running service instead of loading the model locally.
        #[arg(long)]
        server: Option<String>,
    },
    /// Serve the trained models over HTTP.
    Serve {
        /// Bind address; overrides the config file and CMF_BIND.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();

    let result = commands::Context::resolve(&cli.common).and_then(|ctx| match cli.command {
        Command::Ingest {
            input,
            mapping,
            synthetic,
        } => ctx.ingest(input, mapping, synthetic),
        Command::Pairs => ctx.pairs(),
        Command::Finetune => ctx.finetune(),
        Command::Train { frozen } => ctx.train(frozen),
        Command::Evaluate { model } => ctx.evaluate(model),
        Command::Report { model, by, case_study } => ctx.report(model, &by, case_study),
        Command::Predict { json, server } => ctx.predict(&json, server),
        Command::Serve { bind } => ctx.serve(bind),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
