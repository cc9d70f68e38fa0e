//! `geoshap`: command-line front end for GeoShapley explanations.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoshapley::GeoShapError;

#[derive(Parser)]
#[command(name = "geoshap", version, about = "GeoShapley explanations for spatial models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain every row of a CSV with a predictor.
    Explain(ExplainArgs),
    /// Write the simulated validation dataset.
    Simulate(SimulateArgs),
    /// Explain the simulated data with the true model and score recovery.
    Validate(ValidateArgs),
    /// Percentile intervals by refitting on bootstrap resamples.
    Bootstrap(BootstrapArgs),
    /// Sampling variance of phi_GEO by background size.
    BackgroundVariance(BackgroundVarianceArgs),
    /// Plot data (CSV) and static SVG from a result file.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "GEOSHAP_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone)]
pub struct InputArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated location column names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub location_cols: Vec<String>,
    /// Response column; excluded from the model inputs.
    #[arg(long)]
    pub target: Option<String>,
    /// builtin:ols, builtin:truemodel or cmd:"<command line>".
    #[arg(long)]
    pub predictor: String,
    /// full, sample:K:SEED, kmeans:K:SEED, single:mean or single:median.
    #[arg(long, default_value = "kmeans:50:0")]
    pub background: String,
    /// Handshake and per-request timeout for cmd: predictors.
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_json: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Record failing instances as skipped instead of aborting.
    #[arg(long)]
    pub skip_failures: bool,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    /// Subsample this many grid cells.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    /// Dataset size; the full grid when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    /// Explain only this many cells of the full grid.
    #[arg(long)]
    pub eval: Option<usize>,
    #[arg(long, default_value = "kmeans:50:0")]
    pub background: String,
    /// Validation report (JSON).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Full explanation result (JSON), usable with `plot`.
    #[arg(long)]
    pub out_result: Option<PathBuf>,
}

#[derive(Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Interval CSV with _lo/_hi columns.
    #[arg(long)]
    pub out_ci: PathBuf,
    /// Point estimates with non-significant entries left empty.
    #[arg(long)]
    pub out_masked: PathBuf,
    /// Interval JSON.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Args)]
pub struct BackgroundVarianceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Grid cells explained per replicate.
    #[arg(long, default_value_t = 100)]
    pub eval: usize,
    /// sample or kmeans.
    #[arg(long, default_value = "sample")]
    pub method: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    /// Result JSON written by `explain` or `validate`.
    #[arg(long)]
    pub result: PathBuf,
    /// summary, surface or dependence.
    #[arg(long)]
    pub kind: String,
    /// Quantity for `surface`: geo, intrinsic, or a feature name for its
    /// location interaction.
    #[arg(long, default_value = "geo")]
    pub value: String,
    /// Feature for `dependence`.
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

/// Exit code for each error category.
pub fn exit_code(err: &GeoShapError) -> u8 {
    match err.root() {
        GeoShapError::Config(_) | GeoShapError::Dimension { .. } | GeoShapError::Capacity { .. } => 2,
        GeoShapError::Data(_) | GeoShapError::Io(_) | GeoShapError::Csv(_) | GeoShapError::Json(_) => 3,
        GeoShapError::Predictor(_) | GeoShapError::Protocol { .. } => 4,
        GeoShapError::RankDeficient { .. } | GeoShapError::Numerical(_) => 5,
        GeoShapError::Coalition { .. } | GeoShapError::Instance { .. } => unreachable!("root peels context"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Explain(a) => commands::explain(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Bootstrap(a) => commands::bootstrap(&a),
        Command::BackgroundVariance(a) => commands::background_variance(&a),
        Command::Plot(a) => plot::run(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geoshap: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
