mod commands;
mod config;
mod output;
mod remote;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mixdr", version, about = "Mixture discriminant analysis with location/dispersion dimension reduction")]
pub struct Cli {
    /// JSON file with per-command defaults, e.g. {"fit": {"gmax": 3}}.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a labelled dataset.
    Generate(GenerateArgs),
    /// Fit a mixture classifier.
    Fit(FitArgs),
    /// Compute the basis at one λ and project the data.
    Project(ProjectArgs),
    /// Score a grid of λ values by the likelihood-ratio criterion.
    TuneLambda(TuneArgs),
    /// Draw a figure from a projection.
    Plot(PlotArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Talk to a running service.
    Remote(remote::RemoteArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Waveform,
    Scenario5,
    Meanvar,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Scatter,
    Contours,
    Boundary,
    Eigentable,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// meanvar only: mean shift of x1 in class B.
    #[arg(long)]
    pub mu_shift: Option<f64>,
    /// meanvar only: variance of x2 in class B.
    #[arg(long)]
    pub var_ratio: Option<f64>,
    /// meanvar only: appended standard-normal columns.
    #[arg(long)]
    pub noise_dims: Option<usize>,
}

/// Options shared by every command that fits or refits.
#[derive(Args, Debug, Clone)]
pub struct FitOptions {
    #[arg(long, value_parser = ["edda", "mclustda"])]
    pub family: Option<String>,
    /// Comma-separated parametrizations, e.g. EEE,VVV.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long)]
    pub gmax: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub labels_col: Option<String>,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the model-selection table here.
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub labels_col: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = ["full", "diagonal"])]
    pub marginal: Option<String>,
    /// Subtract the marginal mean before projecting.
    #[arg(long)]
    pub centered: bool,
    /// Basis JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Projected coordinates as CSV.
    #[arg(long)]
    pub proj: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub labels_col: Option<String>,
    #[arg(long)]
    pub grid_steps: Option<usize>,
    #[arg(long)]
    pub d_eval: Option<usize>,
    #[arg(long, value_parser = ["full", "diagonal"])]
    pub marginal: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Projection CSV from `project --proj`.
    #[arg(long)]
    pub proj: Option<PathBuf>,
    /// Classifier JSON; needed for contours and boundary.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Basis JSON; needed for eigentable.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Original data, used only for eigentable row names.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub labels_col: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// SVG, or plain text for an eigentable written to a .txt path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Preload this classifier (requires --data).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub labels_col: Option<String>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["full", "diagonal"])]
    pub marginal: Option<String>,
    /// Allowed browser origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Usage = 2,
    Input = 3,
    Numerical = 4,
    Internal = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub category: String,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, category: &str, message: impl Into<String>) -> Self {
        CliError {
            exit,
            category: category.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Exit::Usage, "usage", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(Exit::Input, "io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

impl From<mixdr_core::Error> for CliError {
    fn from(e: mixdr_core::Error) -> Self {
        use mixdr_core::Error as E;
        let exit = match &e {
            E::Singular { .. } | E::NotPositiveDefinite | E::Degenerate(_) | E::Contract(_) => Exit::Numerical,
            _ => Exit::Input,
        };
        CliError::new(exit, e.category(), e.to_string())
    }
}

impl From<mixdr_client::ClientError> for CliError {
    fn from(e: mixdr_client::ClientError) -> Self {
        use mixdr_client::ClientError as C;
        let category = match &e {
            C::Timeout(_) => "remote.timeout",
            other => other.category().unwrap_or("remote.transport"),
        }
        .to_string();
        let exit = match &e {
            C::Api { status, .. } if status.as_u16() == 409 => Exit::Numerical,
            C::FitFailed { .. } => Exit::Numerical,
            C::Api { status, .. } if status.is_server_error() => Exit::Internal,
            _ => Exit::Input,
        };
        CliError {
            exit,
            category,
            message: e.to_string(),
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("MIXDR_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Usage as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": {"category": e.category, "message": e.message}});
            eprintln!("{line}");
            ExitCode::from(e.exit as u8)
        }
    }
}
