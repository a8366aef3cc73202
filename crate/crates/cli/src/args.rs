//! Command-line interface definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::io::{InputFormat, ReferenceSpec};

/// Multi-tenant score serving and calibration toolkit.
#[derive(Debug, Parser)]
#[command(name = "muse", version, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scoring service from a deployment file.
    Serve(ServeArgs),
    /// Fit a quantile table from collected scores against a reference.
    FitQuantiles(FitQuantilesArgs),
    /// Fit the cold-start Beta-mixture prior from labeled training scores.
    FitColdstart(FitColdstartArgs),
    /// Compute the fitting sample size required for a target alert rate.
    Samplesize(SamplesizeArgs),
    /// Evaluate calibration (scores + labels) or distribution alignment.
    Evaluate(EvaluateArgs),
    /// Monte Carlo validation of the sample-size bound.
    ValidateBound(ValidateBoundArgs),
    /// Scripted end-to-end run: cold start, drifted traffic, shadow
    /// collection, refit, promotion, before/after reports.
    LifecycleDemo(LifecycleDemoArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Deployment file (backends, predictors, quantile tables, routing).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080", env = "MUSE_LISTEN")]
    pub listen: String,
    /// Shadow sink JSONL path.
    #[arg(long, default_value = "shadow-sink.jsonl", env = "MUSE_SINK")]
    pub sink: PathBuf,
    /// Synthetic warm-up calls per predictor before readiness.
    #[arg(long, default_value_t = 0, env = "MUSE_WARMUP_COUNT")]
    pub warmup_count: u64,
    /// Seed for warm-up event synthesis.
    #[arg(long, default_value_t = 0)]
    pub warmup_seed: u64,
    /// Abort warm-up (and stay not-ready) after this many milliseconds.
    #[arg(long, value_name = "MS")]
    pub warmup_timeout_ms: Option<u64>,
    /// Bounded shadow queue depth; overflow drops shadow work.
    #[arg(long, default_value_t = 1024, env = "MUSE_SHADOW_QUEUE_DEPTH")]
    pub shadow_queue_depth: usize,
    /// Watch a routing config file and hot-swap it on change.
    #[arg(long, value_name = "FILE")]
    pub watch_routing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitQuantilesArgs {
    /// Score file: CSV with a `score` column, or shadow-sink JSONL.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Where to write the fitted table JSON.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Reference distribution: `uniform`, `skewed`, or a JSON file of
    /// quantiles.
    #[arg(long, default_value = "uniform")]
    pub reference: ReferenceSpec,
    /// Number of probability levels.
    #[arg(long, default_value_t = 1001)]
    pub levels: usize,
    /// Version label recorded in the table.
    #[arg(long, default_value = "v1")]
    pub version: String,
    /// Tenant the samples belong to (also filters JSONL input).
    #[arg(long, default_value = "unknown")]
    pub tenant: String,
    /// Predictor the samples belong to (also filters JSONL input).
    #[arg(long, default_value = "unknown")]
    pub predictor: String,
    /// Keep only JSONL records at or after this RFC 3339 instant.
    #[arg(long, value_name = "RFC3339")]
    pub window_start: Option<chrono::DateTime<chrono::Utc>>,
    /// Keep only JSONL records strictly before this RFC 3339 instant.
    #[arg(long, value_name = "RFC3339")]
    pub window_end: Option<chrono::DateTime<chrono::Utc>>,
}

#[derive(Debug, Args)]
pub struct FitColdstartArgs {
    /// Labeled CSV with `score,label` columns.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Where to write the fit JSON.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Independent search trials; the best fit by divergence wins.
    #[arg(long, default_value_t = 8)]
    pub trials: u32,
    /// Seed for the stochastic search.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also synthesize the default quantile table to this path.
    #[arg(long, value_name = "FILE")]
    pub table_out: Option<PathBuf>,
    /// Reference distribution for the synthesized table.
    #[arg(long, default_value = "uniform")]
    pub reference: ReferenceSpec,
    /// Number of probability levels for the synthesized table.
    #[arg(long, default_value_t = 1001)]
    pub levels: usize,
    /// Version label for the synthesized table.
    #[arg(long, default_value = "v0")]
    pub version: String,
    /// Search population size.
    #[arg(long, default_value_t = 32)]
    pub de_population: usize,
    /// Search generations per trial.
    #[arg(long, default_value_t = 300)]
    pub de_generations: usize,
    /// Differential weight.
    #[arg(long, default_value_t = 0.7)]
    pub de_mutation: f64,
    /// Crossover probability.
    #[arg(long, default_value_t = 0.9)]
    pub de_crossover: f64,
    /// Histogram bins for divergence selection.
    #[arg(long, default_value_t = 100)]
    pub histogram_bins: usize,
    /// Lower bound of the shape-parameter search box.
    #[arg(long, default_value_t = 0.05)]
    pub shape_min: f64,
    /// Upper bound of the shape-parameter search box.
    #[arg(long, default_value_t = 500.0)]
    pub shape_max: f64,
}

#[derive(Debug, Args)]
pub struct SamplesizeArgs {
    /// Target alert rate, strictly inside (0, 1).
    #[arg(long)]
    pub alert_rate: f64,
    /// Tolerated relative error of the realized alert rate.
    #[arg(long)]
    pub relative_error: f64,
    /// Confidence z-score.
    #[arg(long, default_value_t = 1.96)]
    pub z: f64,
}

#[derive(Debug, Args)]
pub struct ValidateBoundArgs {
    /// Target alert rate, strictly inside (0, 1).
    #[arg(long)]
    pub alert_rate: f64,
    /// Tolerated relative error of the realized alert rate.
    #[arg(long)]
    pub relative_error: f64,
    /// Confidence z-score.
    #[arg(long, default_value_t = 1.96)]
    pub z: f64,
    /// Monte Carlo trials (at least 1000).
    #[arg(long, default_value_t = 5000)]
    pub trials: u64,
    /// Seed for the simulation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(subcommand)]
    pub mode: EvaluateMode,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateMode {
    /// Calibration metrics from a labeled score file.
    Calibration(EvaluateCalibrationArgs),
    /// Distribution alignment of a score sample against a reference.
    Distribution(EvaluateDistributionArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateCalibrationArgs {
    /// Labeled CSV with `score,label` columns.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Undersampling ratio; when given, the report compares the metrics
    /// before and after posterior correction at this ratio.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Also print a plaintext comparison table to stderr.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateDistributionArgs {
    /// Score file: CSV with a `score` column, or shadow-sink JSONL.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Target distribution: `uniform`, `skewed`, or a JSON quantile file.
    #[arg(long, default_value = "uniform")]
    pub reference: ReferenceSpec,
    /// Wilson interval z-score.
    #[arg(long, default_value_t = 1.96)]
    pub z: f64,
    /// Keep only JSONL records for this tenant.
    #[arg(long)]
    pub tenant: Option<String>,
    /// Keep only JSONL records for this predictor.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Keep only JSONL records at or after this RFC 3339 instant.
    #[arg(long, value_name = "RFC3339")]
    pub window_start: Option<chrono::DateTime<chrono::Utc>>,
    /// Keep only JSONL records strictly before this RFC 3339 instant.
    #[arg(long, value_name = "RFC3339")]
    pub window_end: Option<chrono::DateTime<chrono::Utc>>,
    /// Also print a plaintext per-bin table to stderr.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct LifecycleDemoArgs {
    /// Directory for the demo's reports and artifacts.
    #[arg(long, value_name = "DIR")]
    pub output_dir: PathBuf,
    /// Master seed; the whole run is deterministic given it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drifted live events streamed before the table refit.
    #[arg(long, default_value_t = 60_000)]
    pub phase1_count: usize,
    /// Live events streamed after promotion.
    #[arg(long, default_value_t = 8_000)]
    pub phase2_count: usize,
    /// Warm-up calls for the embedded service.
    #[arg(long, default_value_t = 128)]
    pub warmup_count: u64,
    /// Listen address for the embedded service.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: String,
}
