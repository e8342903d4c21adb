//! `studyformer` command line: one subcommand per pipeline stage.
//!
//! Exit status: 0 on success, 2 for usage errors (unknown subcommand or
//! flag), 3 for configuration errors, 1 for everything else. Failures print a
//! single `error: <kind> error: <message>` line on stderr.

mod commands;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use run::RunConfig;

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "studyformer", version, about = "Multi-view study classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic shape benchmark to DIR/views and DIR/manifest.tsv.
    SynthData(SynthArgs),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Compare checkpoints on a split and write the AUC report.
    Eval(EvalArgs),
    /// Write study-level probabilities for every study of a manifest.
    Predict(PredictArgs),
    /// Export attention-rollout heatmaps for studies of a manifest.
    AttnMap(AttnArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// key = value file; command-line flags win over its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Small CPU-friendly preset (default).
    #[arg(long, conflicts_with = "paper")]
    pub desk: bool,
    /// Full-size preset: 320×320 inputs, 10×10×1024 features.
    #[arg(long)]
    pub paper: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of studies to render.
    #[arg(long, value_name = "N")]
    pub studies: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Resume from this checkpoint instead of starting fresh.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Copy the backbone of this checkpoint into the fresh model.
    #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
    pub init_backbone: Option<PathBuf>,
    /// Comma-separated label names to train on (label-subset mode).
    #[arg(long, value_name = "CSV")]
    pub labels: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Checkpoints to compare; repeat the flag or separate with commas.
    #[arg(long, value_name = "PATH", required = true, value_delimiter = ',')]
    pub checkpoint: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Study ids to export; all studies when omitted.
    #[arg(long, value_name = "ID", value_delimiter = ',')]
    pub study: Vec<String>,
}

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Exit status for an error returned by a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

/// Binary entry point: logging from `RUST_LOG` (default `warn`), then dispatch.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    dispatch(std::env::args_os())
}
