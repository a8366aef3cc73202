//! Evaluation toolkit: binned relative error against a target distribution
//! with Wilson score intervals, equal-mass sweep ECE, and the Brier score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("score list is empty")]
    EmptyScores,
    #[error("score at index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize },
    #[error("{predictions} predictions cannot be compared with {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("need at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },
    #[error("target mass must have {expected} non-negative entries summing to 1")]
    InvalidTargetMass { expected: usize },
}

/// Wilson score interval for `successes` out of `n` at z-score `z`.
/// Always contains the point estimate `successes / n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    assert!(n > 0, "wilson interval needs n > 0");
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denominator = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denominator;
    let half_width = z * ((p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()) / denominator;
    // Containment of p is exact mathematically; the min/max guard the
    // endpoint cases against floating-point rounding.
    (
        (center - half_width).max(0.0).min(p),
        (center + half_width).min(1.0).max(p),
    )
}

pub const DECILE_BINS: usize = 10;

/// Per-decile comparison of an observed score sample against a target
/// distribution.
///
/// `relative_error[i]` is `observed_fraction / expected_mass − 1`, with
/// the convention that an empty bin against positive expected mass reads
/// −1 (−100%). Wilson bounds are on the observed per-bin proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedComparison {
    pub bin_edges: Vec<f64>,
    pub observed_counts: Vec<u64>,
    pub expected_mass: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub wilson_low: Vec<f64>,
    pub wilson_high: Vec<f64>,
    /// Expected count below 5: the bin is too thin for the normal
    /// approximation and is annotated rather than suppressed.
    pub small_sample: Vec<bool>,
    pub n: u64,
    pub z: f64,
}

impl BinnedComparison {
    /// Whether the target mass for bin `i` lies inside the observed
    /// proportion's Wilson interval, i.e. the relative error is
    /// statistically indistinguishable from zero.
    pub fn within_wilson(&self, i: usize) -> bool {
        (self.wilson_low[i]..=self.wilson_high[i]).contains(&self.expected_mass[i])
    }

    /// All bins with expected count at least `min_expected` sit within
    /// their Wilson interval of the target.
    pub fn well_populated_within_wilson(&self, min_expected: f64) -> bool {
        (0..self.expected_mass.len()).all(|i| {
            self.expected_mass[i] * (self.n as f64) < min_expected || self.within_wilson(i)
        })
    }
}

/// Compare a score sample against per-decile target masses at confidence
/// z. Bins are `[0, 0.1), …, [0.9, 1.0]`.
pub fn binned_relative_error(
    scores: &[f64],
    target_mass: &[f64],
    z: f64,
) -> Result<BinnedComparison, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    if target_mass.len() != DECILE_BINS
        || target_mass.iter().any(|m| !m.is_finite() || *m < 0.0)
        || (target_mass.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(MetricsError::InvalidTargetMass {
            expected: DECILE_BINS,
        });
    }

    let mut observed_counts = vec![0u64; DECILE_BINS];
    for (index, score) in scores.iter().enumerate() {
        if !score.is_finite() || !(0.0..=1.0).contains(score) {
            return Err(MetricsError::ScoreOutOfRange { index });
        }
        let bin = ((score * DECILE_BINS as f64) as usize).min(DECILE_BINS - 1);
        observed_counts[bin] += 1;
    }

    let n = scores.len() as u64;
    let mut relative_error = Vec::with_capacity(DECILE_BINS);
    let mut wilson_low = Vec::with_capacity(DECILE_BINS);
    let mut wilson_high = Vec::with_capacity(DECILE_BINS);
    let mut small_sample = Vec::with_capacity(DECILE_BINS);
    for (count, expected) in observed_counts.iter().zip(target_mass) {
        let observed_fraction = *count as f64 / n as f64;
        let error = if *expected > 0.0 {
            observed_fraction / expected - 1.0
        } else if *count == 0 {
            0.0
        } else {
            f64::INFINITY
        };
        relative_error.push(error);
        let (low, high) = wilson_interval(*count, n, z);
        wilson_low.push(low);
        wilson_high.push(high);
        small_sample.push(expected * (n as f64) < 5.0);
    }

    Ok(BinnedComparison {
        bin_edges: (0..=DECILE_BINS)
            .map(|i| i as f64 / DECILE_BINS as f64)
            .collect(),
        observed_counts,
        expected_mass: target_mass.to_vec(),
        relative_error,
        wilson_low,
        wilson_high,
        small_sample,
        n,
        z,
    })
}

fn validate_pairs(predictions: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    for (index, p) in predictions.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(p) {
            return Err(MetricsError::ScoreOutOfRange { index });
        }
    }
    Ok(())
}

/// Mean squared error between probabilistic predictions and binary
/// outcomes.
pub fn brier_score(predictions: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    validate_pairs(predictions, labels)?;
    if predictions.is_empty() {
        return Err(MetricsError::TooFewPoints {
            required: 1,
            actual: 0,
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let outcome = if *y { 1.0 } else { 0.0 };
            (p - outcome) * (p - outcome)
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Equal-mass sweep expected calibration error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EceSweep {
    pub ece: f64,
    pub bins_used: usize,
}

/// ECE over equal-mass bins with a data-driven bin count: candidate
/// counts b = 2..⌊√n⌋ are swept and the largest b whose per-bin positive
/// rates remain monotone non-decreasing (in bin order by prediction) is
/// selected; ties break toward more bins. When even b = 2 is
/// non-monotone the single-bin estimate is returned.
///
/// Bin boundaries are prediction quantiles, so tied predictions always
/// share a bin; a constant predictor therefore collapses to one bin and
/// scores |mean prediction − positive rate|.
pub fn ece_em_sweep(predictions: &[f64], labels: &[bool]) -> Result<EceSweep, MetricsError> {
    validate_pairs(predictions, labels)?;
    let n = predictions.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints {
            required: 2,
            actual: n,
        });
    }

    let mut pairs: Vec<(f64, bool)> = predictions
        .iter()
        .copied()
        .zip(labels.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted_predictions: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();

    // Prefix sums over the sorted order make each candidate bin count a
    // handful of binary searches.
    let mut prediction_prefix = Vec::with_capacity(n + 1);
    let mut positive_prefix = Vec::with_capacity(n + 1);
    prediction_prefix.push(0.0);
    positive_prefix.push(0u64);
    for (p, y) in &pairs {
        prediction_prefix.push(prediction_prefix.last().unwrap() + p);
        positive_prefix.push(positive_prefix.last().unwrap() + u64::from(*y));
    }

    let ece_for = |boundaries: &[usize]| -> f64 {
        let mut ece = 0.0;
        for window in boundaries.windows(2) {
            let (lo, hi) = (window[0], window[1]);
            if hi == lo {
                continue;
            }
            let count = (hi - lo) as f64;
            let mean_prediction = (prediction_prefix[hi] - prediction_prefix[lo]) / count;
            let positive_rate = (positive_prefix[hi] - positive_prefix[lo]) as f64 / count;
            ece += count / n as f64 * (mean_prediction - positive_rate).abs();
        }
        ece
    };

    let bin_boundaries = |b: usize| -> Vec<usize> {
        // Value-based equal-mass edges: quantiles of the prediction sample.
        // Index boundaries via partition_point so ties never split.
        let mut boundaries = Vec::with_capacity(b + 1);
        boundaries.push(0);
        for j in 1..b {
            let edge = crate::quantile::empirical_quantile(&sorted_predictions, j as f64 / b as f64);
            boundaries.push(sorted_predictions.partition_point(|p| *p < edge));
        }
        boundaries.push(n);
        boundaries.sort_unstable();
        boundaries
    };

    let monotone = |boundaries: &[usize]| -> bool {
        let mut previous_rate = f64::NEG_INFINITY;
        for window in boundaries.windows(2) {
            let (lo, hi) = (window[0], window[1]);
            if hi == lo {
                continue;
            }
            let rate = (positive_prefix[hi] - positive_prefix[lo]) as f64 / (hi - lo) as f64;
            if rate < previous_rate {
                return false;
            }
            previous_rate = rate;
        }
        true
    };

    let max_bins = (n as f64).sqrt().floor() as usize;
    let mut selected: Option<(usize, Vec<usize>)> = None;
    for b in (2..=max_bins).rev() {
        let boundaries = bin_boundaries(b);
        if monotone(&boundaries) {
            selected = Some((b, boundaries));
            break;
        }
    }

    let (bins_used, boundaries) = selected.unwrap_or((1, vec![0, n]));
    Ok(EceSweep {
        ece: ece_for(&boundaries),
        bins_used,
    })
}

/// Calibration summary for one prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub ece_bins_used: usize,
    pub brier: f64,
    pub n: u64,
}

pub fn calibration_report(
    predictions: &[f64],
    labels: &[bool],
) -> Result<CalibrationReport, MetricsError> {
    let sweep = ece_em_sweep(predictions, labels)?;
    Ok(CalibrationReport {
        ece: sweep.ece,
        ece_bins_used: sweep.bins_used,
        brier: brier_score(predictions, labels)?,
        n: predictions.len() as u64,
    })
}
