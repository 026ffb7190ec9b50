//! Command-line front end: `nbrdid estimate` and `nbrdid simulate`.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 estimation
//! failure, 3 inference failure.

pub mod config;
pub mod estimate;
pub mod report;
pub mod simulate;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Estimation(String),
    Inference(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Estimation(_) => 2,
            CliError::Inference(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Estimation(m) | CliError::Inference(m) => m,
        }
    }

    /// Classifies a core error raised during the given stage.
    pub fn from_core(err: nbrdid::Error, stage: Stage) -> Self {
        use nbrdid::Error as E;
        let msg = err.to_string();
        match err {
            E::Config(_) | E::Schema(_) | E::Validation { .. } | E::Parse { .. } | E::Io(_) | E::Csv(_) => CliError::Validation(msg),
            E::Variance(_) => CliError::Inference(msg),
            _ => match stage {
                Stage::Inference => CliError::Inference(msg),
                _ => CliError::Estimation(msg),
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            CliError::Validation(_) => "input error",
            CliError::Estimation(_) => "estimation failed",
            CliError::Inference(_) => "inference failed",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Estimation,
    Inference,
}

#[derive(Parser, Debug)]
#[command(name = "nbrdid", version, about = "Difference-in-differences under neighborhood interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate treatment effects from a two-period dataset.
    Estimate(EstimateArgs),
    /// Run Monte Carlo designs and summarize estimator performance.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Default)]
pub struct EstimateArgs {
    /// Delimited data file with one row per unit.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.txt, report.json and warnings.log.
    #[arg(long)]
    pub out: PathBuf,
    /// Estimand `target` or `target:g`; repeatable, replaces the configured list.
    #[arg(long = "estimand")]
    pub estimands: Vec<String>,
    /// Comma-separated attribute columns.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Option<Vec<String>>,
    /// Comma-separated coordinate columns.
    #[arg(long, value_delimiter = ',')]
    pub coords: Option<Vec<String>>,
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long)]
    pub exposure: Option<String>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// `cbps` or `mle`.
    #[arg(long)]
    pub ps_method: Option<String>,
    /// Comma-separated inference methods: ehw, shac, cluster.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Comma-separated design ids: 1-6, appendixE, appendixF-noSpill, appendixF-spill, placebo.
    #[arg(long, value_delimiter = ',')]
    pub design: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated estimators or families, e.g. `table3` or `dr_cbps,twfe`.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Comma-separated SHAC bandwidths.
    #[arg(long, value_delimiter = ',')]
    pub bandwidths: Option<Vec<f64>>,
    /// Report coverage for every model parameter.
    #[arg(long)]
    pub track_params: bool,
    /// TOML file with a `[simulate]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for summary.txt and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => estimate::command(&a).map(|text| print!("{text}")),
        Command::Simulate(a) => simulate::command(&a).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("nbrdid: {e}");
            e.exit_code()
        }
    }
}

/// Writes files into `dir` only after every file's contents exist, via
/// temporary names renamed into place.
pub fn write_outputs(dir: &std::path::Path, files: &[(&str, String)]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Validation(format!("cannot write to `{}`: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, body) in files {
        std::fs::write(dir.join(format!(".{name}.tmp")), body).map_err(io)?;
    }
    for (name, _) in files {
        std::fs::rename(dir.join(format!(".{name}.tmp")), dir.join(name)).map_err(io)?;
    }
    Ok(())
}
