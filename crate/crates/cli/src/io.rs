//! File ingestion and reference-distribution helpers shared by the
//! subcommands: score CSVs, labeled CSVs, shadow-sink JSONL, and the
//! built-in or user-supplied reference quantile vectors.

use std::path::Path;

use chrono::{DateTime, Utc};
use muse_core::coldstart::{mixture_cdf, reference};
use muse_core::metrics::DECILE_BINS;
use muse_core::quantile::uniform_levels;
use muse_core::transforms::{quantile_map, QuantileTable};
use muse_core::types::Score;
use muse_server::sink::read_records;

use crate::CliError;

/// Input format of a score file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// CSV with a `score` header column (plus `label` where required).
    Csv,
    /// Shadow-sink JSONL records.
    Jsonl,
}

/// Pick the format from an explicit flag or the file extension.
pub fn detect_format(path: &Path, explicit: Option<InputFormat>) -> InputFormat {
    explicit.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        }
    })
}

fn score_column(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Validation(format!("input is missing a {name:?} column")))
}

/// Read a one-score-per-line CSV (header `score`).
pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|err| CliError::Validation(format!("{}: {err}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|err| CliError::Validation(err.to_string()))?
        .clone();
    let column = score_column(&headers, "score")?;
    let mut scores = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|err| CliError::Validation(err.to_string()))?;
        let raw = record.get(column).unwrap_or_default();
        let value: f64 = raw.parse().map_err(|_| {
            CliError::Validation(format!("line {}: {raw:?} is not a number", line + 2))
        })?;
        scores.push(value);
    }
    Ok(scores)
}

/// Read a labeled CSV (headers `score,label`; labels 0/1 or true/false).
pub fn read_labeled_csv(path: &Path) -> Result<(Vec<f64>, Vec<bool>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|err| CliError::Validation(format!("{}: {err}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|err| CliError::Validation(err.to_string()))?
        .clone();
    let score_at = score_column(&headers, "score")?;
    let label_at = score_column(&headers, "label")?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|err| CliError::Validation(err.to_string()))?;
        let raw_score = record.get(score_at).unwrap_or_default();
        let score: f64 = raw_score.parse().map_err(|_| {
            CliError::Validation(format!("line {}: {raw_score:?} is not a number", line + 2))
        })?;
        let raw_label = record.get(label_at).unwrap_or_default();
        let label = match raw_label.trim() {
            "1" | "true" | "TRUE" | "True" => true,
            "0" | "false" | "FALSE" | "False" => false,
            other => {
                return Err(CliError::Validation(format!(
                    "line {}: {other:?} is not a binary label",
                    line + 2
                )))
            }
        };
        scores.push(score);
        labels.push(label);
    }
    Ok((scores, labels))
}

/// Time window filter, half-open `[start, end)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Window {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl Window {
    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.start.map_or(true, |s| at >= s) && self.end.map_or(true, |e| at < e)
    }

    pub fn bounds(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        match (self.start, self.end) {
            (Some(s), Some(e)) => Some((s, e)),
            _ => None,
        }
    }
}

/// Pull scores out of a shadow-sink JSONL file, optionally filtered by
/// tenant, predictor, and time window.
pub fn read_sink_scores(
    path: &Path,
    tenant: Option<&str>,
    predictor: Option<&str>,
    window: Window,
) -> Result<Vec<f64>, CliError> {
    let records = read_records(path)
        .map_err(|err| CliError::Validation(format!("{}: {err}", path.display())))?;
    Ok(records
        .into_iter()
        .filter(|r| tenant.map_or(true, |t| r.tenant_id == t))
        .filter(|r| predictor.map_or(true, |p| r.predictor_id == p))
        .filter(|r| window.contains(r.timestamp))
        .map(|r| r.score)
        .collect())
}

/// Reference distribution selector: a built-in name or a path to a JSON
/// array of quantiles (interpreted at equally spaced levels).
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    Uniform,
    Skewed,
    File(std::path::PathBuf),
}

impl std::str::FromStr for ReferenceSpec {
    type Err = String;

    fn from_str(value: &str) -> Result<Self, Self::Err> {
        Ok(match value {
            "uniform" => ReferenceSpec::Uniform,
            "skewed" => ReferenceSpec::Skewed,
            path => ReferenceSpec::File(path.into()),
        })
    }
}

impl ReferenceSpec {
    /// Reference quantiles aligned with `levels`.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<f64>, CliError> {
        match self {
            ReferenceSpec::Uniform => Ok(reference::uniform(levels)),
            ReferenceSpec::Skewed => Ok(reference::skewed(levels)),
            ReferenceSpec::File(path) => {
                let content = std::fs::read_to_string(path)
                    .map_err(|err| CliError::Validation(format!("{}: {err}", path.display())))?;
                let quantiles: Vec<f64> = serde_json::from_str(&content).map_err(|err| {
                    CliError::Validation(format!("{}: {err}", path.display()))
                })?;
                if quantiles.len() != levels.len() {
                    return Err(CliError::Validation(format!(
                        "reference file has {} quantiles but {} levels were requested",
                        quantiles.len(),
                        levels.len()
                    )));
                }
                Ok(quantiles)
            }
        }
    }

    /// Expected probability mass in each decile bin of the reference.
    pub fn decile_mass(&self) -> Result<Vec<f64>, CliError> {
        match self {
            ReferenceSpec::Uniform => Ok(vec![1.0 / DECILE_BINS as f64; DECILE_BINS]),
            ReferenceSpec::Skewed => {
                let mixture = reference::skewed_mixture();
                Ok((0..DECILE_BINS)
                    .map(|i| {
                        let lo = i as f64 / DECILE_BINS as f64;
                        let hi = (i + 1) as f64 / DECILE_BINS as f64;
                        mixture_cdf(hi, &mixture) - mixture_cdf(lo, &mixture)
                    })
                    .collect())
            }
            ReferenceSpec::File(_) => {
                // The piecewise-linear inverse of the quantile vector is the
                // reference CDF; bin mass is its increment across the edges.
                let levels = uniform_levels(1001);
                let quantiles = self.quantiles(&levels)?;
                let inverse = QuantileTable::new(
                    quantiles,
                    levels.clone(),
                    "reference-cdf",
                    DateTime::<Utc>::UNIX_EPOCH,
                    0,
                )
                .map_err(CliError::validation)?;
                let cdf = |x: f64| quantile_map(Score::new(x).unwrap(), &inverse).value();
                Ok((0..DECILE_BINS)
                    .map(|i| {
                        let lo = i as f64 / DECILE_BINS as f64;
                        let hi = (i + 1) as f64 / DECILE_BINS as f64;
                        (cdf(hi) - cdf(lo)).max(0.0)
                    })
                    .collect())
            }
        }
    }
}
