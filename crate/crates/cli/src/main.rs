mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use error::{CliError, CliResult};

/// Network change-point detection: synthetic generation, ingestion,
/// s-GNN training, detection, benchmarks and self-supervised labels.
#[derive(Debug, Parser)]
#[command(name = "ncpd", version, args_override_self = true)]
pub struct Cli {
    /// Key-value config file (`key = value` per line); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory receiving every output file.
    #[arg(long, global = true, env = "NCPD_OUTPUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Synthetic dynamic SBM sequences and labelled pair datasets.
    Generate(GenerateArgs),
    /// Correlation networks from a multivariate time-series panel.
    Ingest(IngestArgs),
    /// Train an s-GNN on labelled pairs, optionally with a grid search.
    Train(TrainArgs),
    /// Run a detector over a network and declare change-points.
    Detect(DetectArgs),
    /// Scenario sweeps with aggregated localisation errors.
    Benchmark(BenchmarkArgs),
    /// Pre-estimate change-points of a correlation sequence without labels.
    SelfsupLabels(SelfsupArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSource {
    /// Independent graph pairs drawn from the two generating models.
    Independent,
    /// Pairs of snapshots of the generated sequence.
    Sequence,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// merge | birth1 | birth2 | swaps
    #[arg(long)]
    pub scenario: String,
    /// Difficulty level: p (merge, birth2), s (birth1) or h (swaps).
    #[arg(long, aliases = ["p", "s", "h"])]
    pub level: f64,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    /// Sequence length.
    #[arg(long = "T", default_value_t = 100)]
    pub t_len: usize,
    /// Fixed change-point; drawn uniformly in [T/4, 3T/4] when absent.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Number of sequences; sequence i uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Labelled pairs per sequence (0 skips pair datasets).
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, value_enum, default_value_t = PairSource::Independent)]
    pub pair_source: PairSource,
    /// Validation window for sequence pairs.
    #[arg(long, default_value_t = 6)]
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMethod {
    /// Keep entries below the q-low or above the q-high pooled quantile.
    Quantile,
    /// Keep off-diagonal entries with |c| > eta.
    Threshold,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Panel CSV: one series per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Observations per snapshot (non-overlapping windows).
    #[arg(long)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = GraphMethod::Quantile)]
    pub method: GraphMethod,
    #[arg(long, default_value_t = 0.05)]
    pub q_low: f64,
    #[arg(long, default_value_t = 0.95)]
    pub q_high: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eta: f64,
    /// Long-format node attributes (t,node,attr_1..attr_d).
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Keep attributes unstandardized.
    #[arg(long)]
    pub raw_attributes: bool,
    /// One integer label per snapshot; label changes become change-points.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub change_points: Option<Vec<usize>>,
    /// Output file stem.
    #[arg(long, default_value = "network")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training pairs CSV.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Validation pairs CSV.
    #[arg(long)]
    pub val: PathBuf,
    /// Test pairs CSV, scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Network the pairs index into; defaults to the `# source:` of the pair file.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Hyperparameter grid: none | default-synthetic | financial.
    #[arg(long, default_value = "none")]
    pub grid: String,
    /// degree | identity | random-walk:k | laplacian:k
    #[arg(long, default_value = "degree")]
    pub encoding: String,
    /// sortk | max | average
    #[arg(long, default_value = "sortk")]
    pub pooling: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f64,
    #[arg(long, default_value_t = 40)]
    pub sortk: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Widths of the two fully connected layers.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [32, 16])]
    pub fc: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Feed node attributes instead of the positional encoding.
    #[arg(long)]
    pub use_attributes: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// sgnn or a baseline: frobenius, procrustes, deltacon, wl, sc-ncpd, lad, cusum, cusum2.
    #[arg(long, default_value = "sgnn")]
    pub method: String,
    /// Model checkpoint (sgnn only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Window size L.
    #[arg(long = "L", default_value_t = 6)]
    pub window: usize,
    /// Detection threshold, or `auto` to calibrate on the validation range.
    #[arg(long)]
    pub theta: Option<String>,
    /// Calibration range `a..b` (1-based, inclusive); defaults to the 60-80% slice.
    #[arg(long)]
    pub val_range: Option<String>,
    /// Tolerance of the adjusted F1.
    #[arg(long, default_value_t = 5)]
    pub tolerance: usize,
    /// argmin | max-increment
    #[arg(long, default_value = "argmin")]
    pub localisation: String,
    /// Detect on the increments |Z_t - Z_{t-1}| instead of Z_t.
    #[arg(long)]
    pub increments: bool,
    /// Use the MMD-style statistic for the learned similarity.
    #[arg(long)]
    pub mmd: bool,
    #[arg(long, default_value = "detect")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    /// merge | birth1 | birth2 | swaps | window-sweep | pooling-sweep
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Number of seeds, starting at `seed`.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "T")]
    pub t_len: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub poolings: Option<Vec<String>>,
    /// Baselines to include (`none` for the s-GNN only).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub encoding: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub localisation: Option<String>,
    #[arg(long, default_value = "benchmark")]
    pub name: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SelfsupArgs {
    /// Correlation matrix sequence (CSV blocks separated by blank lines).
    #[arg(long)]
    pub input: PathBuf,
    /// Clusters per snapshot.
    #[arg(long, conflicts_with = "k_range")]
    pub k: Option<usize>,
    /// Silhouette candidates `a..b` (inclusive) when `k` is not fixed.
    #[arg(long, default_value = "2..6")]
    pub k_range: String,
    /// Snapshot clusters C.
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Network matching the input; enables writing training/validation pairs.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Training pairs drawn with the random scheme.
    #[arg(long, default_value_t = 0)]
    pub pairs: usize,
    /// Validation window L of the windowed scheme.
    #[arg(long, default_value_t = 6)]
    pub window: usize,
    /// Train,validation fractions of the sequence used for pairs.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.6, 0.2])]
    pub split: Vec<f64>,
    #[arg(long, default_value = "selfsup")]
    pub name: String,
}

fn run() -> CliResult<()> {
    let root = Cli::command();
    let raw: Vec<String> = std::env::args().collect();
    let args = config::expand_args(raw, &root)?;
    let matches = match root.try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            e.print().map_err(|err| CliError::io(std::path::Path::new("<stdout>"), err))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim().to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    commands::dispatch(&cli)
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
