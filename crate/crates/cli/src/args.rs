use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Calibrate and evaluate transient-change detectors, reproduce the
/// detection tables and run the synthetic streak pipeline.
#[derive(Debug, Parser)]
#[command(name = "tdet", version)]
pub struct Cli {
    /// Worker threads (default: available parallelism; TD_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the threshold meeting a local false-alarm probability.
    Calibrate(CalibrateArgs),
    /// Calibrate a rule, then estimate its probability of detection.
    Pd(PdArgs),
    /// Reproduce one of the detection tables I..V as CSV.
    Table(TableArgs),
    /// PD over a grid of assumed and true post-change means.
    Mismatch(MismatchArgs),
    /// ARL lower bound of the local false-alarm class, optionally checked by simulation.
    ArlBound(ArlArgs),
    /// Synthetic streak frames: generate, detect, benchmark.
    #[command(subcommand)]
    Streak(StreakCommand),
}

#[derive(Debug, Subcommand)]
pub enum StreakCommand {
    /// Write a noisy frame with an optional streak (.f32 raster plus JSON sidecar).
    Synth(SynthArgs),
    /// Scan, localize and refine a streak in a frame.
    Detect(DetectArgs),
    /// Endpoint error versus SNR over many synthetic frames.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    ModCusum,
    Cusum,
    Fma,
    WlCusum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartName {
    Cold,
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormName {
    Statistic,
    Llr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    /// Window starting at the origin.
    Origin,
    /// Supremum over window starts up to --ell-max.
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionName {
    Published,
    Literal,
}

/// Rule and Gaussian model flags shared by calibrate, pd and arl-bound.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RuleArgs {
    #[arg(long, value_enum)]
    pub rule: Option<RuleName>,
    /// Assumed post-change mean.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Noise standard deviation (default 1).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Modified CUSUM tuning (required for mod-cusum).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Window length of fma and wl-cusum.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub window: Option<usize>,
    /// FMA start (default cold).
    #[arg(long, value_enum)]
    pub start: Option<StartName>,
    /// FMA threshold form (default statistic).
    #[arg(long, value_enum)]
    pub form: Option<FormName>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CalibrateArgs {
    /// JSON file supplying any of the flags below; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleArgs,
    /// Local window m.
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Calibration replications.
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// False-alarm functional (default origin).
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Largest window start for --mode sup (default 20m).
    #[arg(long)]
    pub ell_max: Option<u64>,
    /// Threshold search interval LO,HI (default -1000,1000).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bracket: Option<Vec<f64>>,
    /// JSON output path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PdArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleArgs,
    /// True post-change mean (default: the assumed --theta).
    #[arg(long)]
    pub true_theta: Option<f64>,
    /// Change duration law: geom:RHO (N >= 1), geom0:RHO (N >= 0), fixed:N or infinite.
    #[arg(long)]
    pub duration: Option<String>,
    /// Pre-change observations before the change.
    #[arg(long)]
    pub changepoint: Option<u64>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Calibration replications (default 1000000).
    #[arg(long)]
    pub cal_reps: Option<u64>,
    /// PD replications (default 100000).
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TableArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Table id, I..V.
    #[arg(long)]
    pub id: Option<String>,
    /// PD replications per cell (default 100000).
    #[arg(long)]
    pub reps: Option<u64>,
    /// Calibration replications (default 1000000).
    #[arg(long)]
    pub cal_reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation convention (default published).
    #[arg(long, value_enum)]
    pub convention: Option<ConventionName>,
    /// CSV output path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the rows as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct MismatchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Assumed post-change means, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub assumed: Option<Vec<f64>>,
    /// True post-change means, comma separated.
    #[arg(long = "true", value_delimiter = ',')]
    #[serde(rename = "true")]
    pub true_thetas: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Duration parameter and modified CUSUM tuning (default 0.1).
    #[arg(long)]
    pub rho: Option<f64>,
    /// FMA window (default round(1/rho)).
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub window: Option<usize>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub cal_reps: Option<u64>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionName>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ArlArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// With --rule, calibrate it and estimate its ARL against the bound.
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleArgs,
    #[arg(long)]
    pub cal_reps: Option<u64>,
    /// ARL replications (default 20000).
    #[arg(long)]
    pub reps: Option<u64>,
    /// Run-length cap (default 1000000).
    #[arg(long)]
    pub cap: Option<u64>,
    /// Calibration functional (default sup).
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub ell_max: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    /// Streak amplitude over sigma; 0 writes pure noise.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Streak length in px (default 70).
    #[arg(long)]
    pub len: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub psf: Option<f64>,
    /// Width of the central search strip the streak is placed in (default 16).
    #[arg(long)]
    pub strip: Option<usize>,
    /// Raster path; the sidecar goes next to it with a .json extension (default frame.f32).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export a 16-bit PGM here.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DetectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Raster written by `streak synth`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Width of the central search strip (default 16).
    #[arg(long)]
    pub strip: Option<usize>,
    /// Per-step false-alarm probability of the scan (default 0.001).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scan threshold; calibrated from --alpha when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub psf: Option<f64>,
    /// Seed of the threshold calibration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// SNR points, comma separated (default 0.9,1,2,5,10).
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// Trials per SNR point (default and minimum 1000).
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub len: Option<f64>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub strip: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
