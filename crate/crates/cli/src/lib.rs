//! The `coa` command line: run chains over a manifest, score transcripts,
//! run the ablation suite, time methods, and manage datasets.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 usage error,
//! 3 run failure, 4 scoring failure, 5 split verification failure.

mod ablate;
mod backend;
mod data;
mod io;
mod run;
mod score;
mod serve;
mod timing;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use ablate::{cmd_ablate, AblateArgs, AblationFile};
pub use backend::BackendArgs;
pub use data::{cmd_convert, cmd_verify_splits, ConvertArgs, ConvertSource, VerifyArgs};
pub use run::{cmd_run, RunArgs, RunMeta, RunSummary};
pub use score::{cmd_score, ScoreArgs, ScoreFile, ScoredRow};
pub use serve::{cmd_serve_mock, ServeArgs};
pub use timing::{cmd_time, render_timings, MethodTiming, TimeArgs};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUN: i32 = 3;
pub const EXIT_SCORE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(EXIT_USAGE, anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

/// Anything not classified otherwise is a configuration / I/O error.
impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_CONFIG, error }
    }
}

macro_rules! config_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::new(EXIT_CONFIG, e)
            }
        }
    )*};
}

config_errors!(coa_core::config::ConfigError, coa_core::backends::BackendError);

pub type CliResult<T> = Result<T, CliError>;

pub(crate) trait ExitContext<T> {
    fn exit_code(self, code: i32) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for Result<T, E> {
    fn exit_code(self, code: i32) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "coa", version, about = "Chain-of-action image labeling harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured chain over a manifest and write transcripts.
    Run(RunArgs),
    /// Score transcripts against a manifest.
    Score(ScoreArgs),
    /// Run and score every ablation config over one manifest.
    Ablate(AblateArgs),
    /// Measure per-image chat latency for the chain and the baselines.
    Time(TimeArgs),
    /// Convert annotations into a manifest.
    Convert(ConvertArgs),
    /// Check manifest split sizes against expected counts.
    VerifySplits(VerifyArgs),
    /// Serve a fixture file over the HTTP wire protocol.
    ServeMock(ServeArgs),
}

/// Options shared by the commands that build a chain config.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// Harness config file (TOML).
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override the action config: `1+2+5`, `full`, `merged`, `baseline_vqa`, `baseline_caption`.
    #[arg(long)]
    pub actions: Option<String>,
    /// Images processed concurrently.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Splits,
    Images,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a).map(|_| ()),
        Command::Score(a) => cmd_score(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::Time(a) => cmd_time(&a).map(|_| ()),
        Command::Convert(a) => cmd_convert(&a),
        Command::VerifySplits(a) => cmd_verify_splits(&a).map(|_| ()),
        Command::ServeMock(a) => cmd_serve_mock(&a),
    }
}
