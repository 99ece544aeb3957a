//! The `medcbr` command: run configuration, run directories and the subcommands.

mod commands;
mod config;
mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{dispatch, mean_std, EvalSummary, FoldMetrics, MeanStd};
pub use config::{
    apply_override, CorpusSection, EnrichmentSection, LoadedConfig, ModelSection,
    ReasoningSection, RunConfig,
};
pub use run::{CommandRecord, RunDir, RunSummary};

use crate::corpus::CorpusError;
use crate::encoder::EncoderError;
use crate::enrichment::EnrichmentError;
use crate::guidelines::GuidelineError;
use crate::metrics::MetricsError;
use crate::reasoning::ReasoningError;
use crate::training::TrainingError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Integrity(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Guideline(#[from] GuidelineError),
    #[error(transparent)]
    Enrichment(#[from] EnrichmentError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "medcbr", version, about = "Concept-based diagnosis with guideline-grounded explanations")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set model.train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory for the corpus and its `run.toml`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub concepts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Variant to train, by directory name; the configured variant when absent.
    #[arg(long, conflicts_with = "ablation")]
    pub variant: Option<String>,
    /// Train every rung of the ablation ladder.
    #[arg(long)]
    pub ablation: bool,
    /// Train a single fold (for fold-parallel runs).
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Evaluate one variant; every trained variant when absent.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReasonArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub variant: Option<String>,
    /// Fold whose test split is explained.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReviewExportArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Number of cases; `reasoning.review_cases` when absent.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReviewImportArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Filled-in rubric CSV.
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the manifest and write patient-level folds.
    Prepare(ConfigArgs),
    /// Generate a synthetic concept-encoded corpus and a matching run config.
    Synth(SynthArgs),
    /// Generate enriched reports for every sample, through the cache.
    Enrich(ConfigArgs),
    /// Train per fold.
    Train(TrainArgs),
    /// Recompute test predictions from checkpoints and write metrics reports.
    Eval(EvalArgs),
    /// Generate explanations for a fold's test split.
    Reason(ReasonArgs),
    /// Export blinded case bundles and the sealed key.
    ReviewExport(ReviewExportArgs),
    /// Import reviewer rubric scores.
    ReviewImport(ReviewImportArgs),
    /// Reveal the sealed key once scores are in.
    ReviewUnseal(ConfigArgs),
    /// Aggregate tables for the run.
    Report(ConfigArgs),
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config {
        field: "arguments".into(),
        message: e.to_string(),
    })?;
    dispatch(cli.command)
}

/// Entry point of the binary.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
