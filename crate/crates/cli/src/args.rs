use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "baq", version, about = "Sensitivity-driven mixed-precision weight quantization")]
pub struct Cli {
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for layer-level parallelism.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize every layer under a directory and write packed files plus a report.
    Quantize(QuantizeArgs),
    /// Write seeded synthetic layers (weights and calibration activations).
    Synth(SynthArgs),
    /// Report per-layer bit allocations without quantizing.
    Allocate(AllocateArgs),
    /// Measure how orthogonal transforms homogenize column sensitivities.
    TransformBench(BenchArgs),
    /// Check a packed file and compare it against reference weights.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Target average bitwidth.
    #[arg(long, value_name = "BITS")]
    pub target_bits: Option<f64>,

    /// Hessian damping as a fraction of its mean diagonal.
    #[arg(long)]
    pub percdamp: Option<f64>,

    /// Repeat the reference-loss correction until the average is within 0.05 bits.
    #[arg(long)]
    pub iterate: bool,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Directory of layer subdirectories, or a single layer directory.
    #[arg(long, short)]
    pub input: PathBuf,

    /// Output directory for `<layer>.baqp` files and `report.csv`.
    #[arg(long, short)]
    pub output: PathBuf,

    #[command(flatten)]
    pub tuning: TuningArgs,

    /// Give every column the target width (must be an integer) instead of allocating.
    #[arg(long)]
    pub uniform: bool,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long, short)]
    pub input: PathBuf,

    /// CSV destination; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args, Clone)]
pub struct LayerShape {
    #[arg(long, default_value_t = 256)]
    pub rows: usize,

    #[arg(long, default_value_t = 256)]
    pub cols: usize,

    /// Row ranges span this many decades.
    #[arg(long, default_value_t = 3.0)]
    pub decades: f64,

    /// Largest over smallest calibration Gram eigenvalue (log-spaced spectrum).
    #[arg(long, default_value_t = 1e3, conflicts_with = "outliers")]
    pub condition: f64,

    /// Use an outlier spectrum with this many high-energy channels instead.
    #[arg(long)]
    pub outliers: Option<usize>,

    /// Energy of each outlier channel relative to the rest.
    #[arg(long, default_value_t = 1e3, requires = "outliers")]
    pub outlier_gain: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub output: PathBuf,

    #[command(flatten)]
    pub shape: LayerShape,

    /// Number of layers; layer `k` uses seed `seed + k`.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Layers to benchmark; a synthetic layer is generated when omitted.
    #[arg(long, short)]
    pub input: Option<PathBuf>,

    /// Directory for the per-mode CSVs and `summary.csv`.
    #[arg(long, short)]
    pub output: PathBuf,

    #[command(flatten)]
    pub shape: LayerShape,

    /// Transform seeds per layer and mode.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,

    /// First transform seed; also seeds the synthetic layer.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub block_size: Option<usize>,

    /// Only run this mode (mild, moderate or haar).
    #[arg(long)]
    pub mode: Option<String>,

    /// Uniform width of the sensitivity probe.
    #[arg(long)]
    pub probe_bits: Option<u8>,

    #[arg(long)]
    pub percdamp: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Packed layer file.
    pub packed: PathBuf,

    /// Original weights the file was produced from.
    pub reference: PathBuf,

    /// Calibration activations, for the proxy loss.
    #[arg(long)]
    pub calib: Option<PathBuf>,

    #[arg(long)]
    pub percdamp: Option<f64>,
}
