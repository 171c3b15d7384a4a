//! Command-line driver: `synth → ingest → features → target → select →
//! train/evaluate → render`, one subcommand per stage, all communicating
//! through files in the run directory.
//!
//! Run directory layout (`--out`):
//!
//! ```text
//! world/      synth output (cells, economy, series_*, truth.json)
//! data/       ingested tables in the columnar binary format
//! features.geof, oracle.json
//! target.csv [target_plus.csv, target_minus.csv]
//! selection/  selection.csv, curve.csv, correlations.csv, selection.json
//! models/     <model>_<sample>.geom + .json
//! eval/       table.csv, table.txt, fields/<sample>_<kind>.csv
//! maps/       rendered .pgm/.ppm/.txt
//! manifest_<command>.json
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "geoecon", version, about = "Gridded geo-economic statistical learning pipeline")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true, env = "GEOECON_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed for generation, folds and forests.
    #[arg(long, global = true, env = "GEOECON_SEED")]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, env = "GEOECON_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, env = "GEOECON_THREADS")]
    pub threads: Option<usize>,
    /// Evaluation sample: all, top, middle or bottom.
    #[arg(long, global = true, env = "GEOECON_SAMPLE")]
    pub sample: Option<String>,
    /// Normalize every sample's MAE by the SD of the full target.
    #[arg(long, global = true, env = "GEOECON_GLOBAL_SD")]
    pub global_sd: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world with known ground truth.
    Synth(SynthArgs),
    /// Validate input tables and store them in the binary format.
    Ingest(IngestArgs),
    /// Derive the predictor matrix from ingested series.
    Features(FeaturesArgs),
    /// Build the masked log10 per-capita target and its terciles.
    Target(TargetArgs),
    /// Rank predictors with the three-stage selection procedure.
    Select(SelectArgs),
    /// Fit one model and store it.
    Train(TrainArgs),
    /// Cross-validated comparison table and diagnostic fields.
    Evaluate(EvaluateArgs),
    /// Draw a per-cell field as a global 1° map.
    Render(RenderArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Features(_) => "features",
            Command::Target(_) => "target",
            Command::Select(_) => "select",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FileFormat,
    #[arg(long)]
    pub n_cells: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub cells: Option<PathBuf>,
    #[arg(long)]
    pub economy: Option<PathBuf>,
    /// Directory holding `series_<variable>.csv` or `.geof` files.
    #[arg(long)]
    pub series_dir: Option<PathBuf>,
    /// Economy years to keep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub years: Option<Vec<i32>>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Also write features.csv.
    #[arg(long)]
    pub csv: bool,
    /// Ground truth to check derived statistics against (defaults to
    /// world/truth.json when present).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Also write the mean ± 1 sd targets used by the stationarity check.
    #[arg(long)]
    pub stationarity: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Reduced ensemble sizes.
    #[arg(long)]
    pub quick: bool,
    /// Target file (defaults to target.csv in the run directory).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Output subdirectory name.
    #[arg(long, default_value = "selection")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Rf,
    Gb,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorSet {
    All,
    Selected,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "rf")]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value = "all")]
    pub predictors: PredictorSet,
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rf,gb,ml")]
    pub models: Vec<ModelKind>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Forest size override.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Skip the out-of-bag rows.
    #[arg(long)]
    pub no_oob: bool,
    /// Ranked-predictor steps n with an improvement field |f(n-1) - y| - |f(n) - y|.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    pub delta_steps: Vec<usize>,
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Gray,
    Tercile,
    Ascii,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Diagnostic field CSV (`cell_id,<kind>`).
    #[arg(long, conflicts_with = "predictor", required_unless_present = "predictor")]
    pub field: Option<PathBuf>,
    /// Predictor column of features.geof.
    #[arg(long)]
    pub predictor: Option<String>,
    #[arg(long, value_enum, default_value = "tercile")]
    pub mode: RenderMode,
    /// Tercile cut points `t1,t2` (default: target thresholds for observed
    /// and prediction fields, the field's own terciles otherwise).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub thresholds: Option<Vec<f64>>,
    /// Output file (default maps/<name>.<pgm|ppm|txt>).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses, sets up logging and the thread pool, runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if code != 0 {
                eprintln!("{}", CliError::Usage(e.kind().to_string()).to_line());
            }
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("GEOECON_LOG")
        .try_init();
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}
