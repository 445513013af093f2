//! `mecal` — calibrate qRT-PCR, microarray and RNA-Seq expression tables
//! with a measurement-error model, test differential expression, diagnose
//! residuals and run seeded simulation experiments.
//!
//! Every run writes its outputs plus a `manifest.json` into `--out`; the
//! manifest records the fully-resolved argument vector and input digests, so
//! `mecal rerun manifest.json --out DIR` reproduces the run byte for byte
//! (the manifest itself differs only in timing and output location).

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use mecal::ingest::IngestError;
use mecal::inference::InferenceError;
use mecal::model::ModelError;
use mecal::sim::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable exit codes, one family per failure class:
    /// 1 i/o, 2 usage, 3 parse, 4 nesting, 5 model/fit, 6 config schema.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Ingest(IngestError::NestingViolation { .. }) => 4,
            CliError::Ingest(IngestError::Io(_)) => 1,
            CliError::Ingest(_) => 3,
            CliError::Model(ModelError::ReportSyntax { .. }) => 3,
            CliError::Model(_) => 5,
            CliError::Inference(InferenceError::Model(ModelError::ReportSyntax { .. })) => 3,
            CliError::Inference(InferenceError::InvalidFdr(_)) => 2,
            CliError::Inference(_) => 5,
            CliError::Sim(SimError::InvalidConfig { .. }) => 6,
            CliError::Sim(SimError::Model(_)) | CliError::Sim(SimError::Inference(_)) => 5,
            CliError::Sim(SimError::TooManySkips { .. }) => 5,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Base seed for all stochastic steps (bootstrap, simulation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Cap the number of worker threads (0 = number of cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
#[command(
    name = "mecal",
    version,
    about = "Measurement-error calibration of qRT-PCR, microarray and RNA-Seq expression data"
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the structural parameters from a measurement table.
    Fit(commands::fit::FitArgs),
    /// Calibrate per-gene expression onto the qRT-PCR scale.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Two-condition differential-expression analysis with FDR control.
    De(commands::de::DeArgs),
    /// Residual diagnostics and QQ pairs for the fitted model.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Generate datasets or run simulation experiments.
    Simulate(commands::simulate::SimulateArgs),
    /// Re-execute a previous run from its manifest.
    Rerun(commands::rerun::RerunArgs),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.globals.threads > 0 {
        // ignore failure: the global pool may already exist under rerun
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.globals.threads)
            .build_global();
    }
    match cli.command {
        Command::Fit(args) => commands::fit::run(&cli.globals, &args),
        Command::Calibrate(args) => commands::calibrate::run(&cli.globals, &args),
        Command::De(args) => commands::de::run(&cli.globals, &args),
        Command::Diagnose(args) => commands::diagnose::run(&cli.globals, &args),
        Command::Simulate(args) => commands::simulate::run(&cli.globals, &args),
        Command::Rerun(args) => commands::rerun::run(&cli.globals, &args),
    }
}

/// Entry point used by `rerun` to re-dispatch a recorded argument vector.
pub(crate) fn dispatch_argv(argv: Vec<String>) -> Result<(), CliError> {
    let mut full = vec!["mecal".to_string()];
    full.extend(argv);
    let cli = Cli::try_parse_from(&full)
        .map_err(|e| CliError::Usage(format!("recorded argv does not parse: {e}")))?;
    dispatch(cli)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
