//! Offline estimation of source quantiles from score samples, quantile
//! table construction against a reference, and the order-statistic
//! sample-size bound with its Monte Carlo validation.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transforms::{QuantileTable, TableError};

/// Scores collected for one tenant/predictor pair over a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    scores: Vec<f64>,
    pub tenant_id: String,
    pub predictor_id: String,
    pub window: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

impl SampleSet {
    pub fn new(
        scores: Vec<f64>,
        tenant_id: impl Into<String>,
        predictor_id: impl Into<String>,
        window: Option<(DateTime<Utc>, DateTime<Utc>)>,
    ) -> Result<Self, FitError> {
        if scores.is_empty() {
            return Err(FitError::EmptySampleSet);
        }
        for (index, value) in scores.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(value) {
                return Err(FitError::ScoreOutOfRange {
                    index,
                    value: *value,
                });
            }
        }
        Ok(SampleSet {
            scores,
            tenant_id: tenant_id.into(),
            predictor_id: predictor_id.into(),
            window,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("sample {index} has value {value} outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },
    #[error("levels must be strictly increasing (violated at index {index})")]
    LevelsNotSorted { index: usize },
    #[error("levels must span [0, 1] with at least 2 entries")]
    InvalidLevels,
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Default probability levels: 1001 equally spaced points 0, 0.001, …, 1,
/// giving 0.1% alert-rate granularity.
pub fn default_levels() -> Vec<f64> {
    uniform_levels(1001)
}

/// `n` equally spaced probability levels spanning [0, 1].
pub fn uniform_levels(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least 2 levels");
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn validate_levels(levels: &[f64]) -> Result<(), FitError> {
    if levels.len() < 2 || levels[0] != 0.0 || *levels.last().unwrap() != 1.0 {
        return Err(FitError::InvalidLevels);
    }
    for index in 1..levels.len() {
        if !(levels[index] > levels[index - 1]) {
            return Err(FitError::LevelsNotSorted { index });
        }
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(FitError::InvalidLevels);
    }
    Ok(())
}

/// Empirical quantile of sorted data at probability `p`, interpolating
/// linearly between order statistics (the usual "type 7" convention).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = (h.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Emitted when a table is fitted from fewer samples than the
/// order-statistic bound asks for at the finest level granularity. The
/// table is still produced: cold-start serving explicitly runs below
/// sufficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeWarning {
    pub actual: u64,
    pub required: u64,
    pub alert_rate: f64,
    pub relative_error: f64,
    pub z: f64,
}

/// A fitted table plus the sufficiency warning, when one applies.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTable {
    pub table: QuantileTable,
    pub warning: Option<SampleSizeWarning>,
}

/// Fit a quantile table for `samples` against `reference_q`, estimating
/// the source quantile at each probability level.
///
/// Endpoints are pinned to 0/1 and mass atoms are collapsed by the table
/// constructor. `sample_count` records the fitting volume.
pub fn fit_quantile_table(
    samples: &SampleSet,
    reference_q: &[f64],
    levels: &[f64],
    version: impl Into<String>,
) -> Result<FittedTable, FitError> {
    fit_quantile_table_at(samples, reference_q, levels, version, Utc::now())
}

/// As [`fit_quantile_table`] with an explicit `fitted_at` timestamp, for
/// reproducible outputs.
pub fn fit_quantile_table_at(
    samples: &SampleSet,
    reference_q: &[f64],
    levels: &[f64],
    version: impl Into<String>,
    fitted_at: DateTime<Utc>,
) -> Result<FittedTable, FitError> {
    validate_levels(levels)?;
    let mut sorted = samples.scores().to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut source_q: Vec<f64> = levels
        .iter()
        .map(|level| empirical_quantile(&sorted, *level))
        .collect();
    let last = source_q.len() - 1;
    source_q[0] = 0.0;
    source_q[last] = 1.0;

    let table = QuantileTable::new(
        source_q,
        reference_q.to_vec(),
        version,
        fitted_at,
        samples.len() as u64,
    )?;

    // Finest alert-rate granularity the level grid can express.
    let smallest_alert_rate = 1.0 - levels[levels.len() - 2];
    let warning = match SampleSizeQuery::new(smallest_alert_rate, 0.1, 1.96) {
        Ok(query) => {
            let required = required_samples(&query);
            if (samples.len() as u64) < required {
                Some(SampleSizeWarning {
                    actual: samples.len() as u64,
                    required,
                    alert_rate: smallest_alert_rate,
                    relative_error: 0.1,
                    z: 1.96,
                })
            } else {
                None
            }
        }
        Err(_) => None,
    };

    Ok(FittedTable { table, warning })
}

/// Inputs to the fitting-volume bound: target alert rate, tolerated
/// relative error, and the z-score of the desired confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeQuery {
    pub alert_rate: f64,
    pub relative_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("alert rate must lie strictly inside (0, 1), got {0}")]
    InvalidAlertRate(f64),
    #[error("relative error must be positive, got {0}")]
    InvalidRelativeError(f64),
    #[error("z-score must be positive, got {0}")]
    InvalidZScore(f64),
    #[error("need at least 1000 trials, got {0}")]
    TooFewTrials(u64),
}

impl SampleSizeQuery {
    pub fn new(alert_rate: f64, relative_error: f64, z_score: f64) -> Result<Self, BoundError> {
        if !alert_rate.is_finite() || alert_rate <= 0.0 || alert_rate >= 1.0 {
            return Err(BoundError::InvalidAlertRate(alert_rate));
        }
        if !relative_error.is_finite() || relative_error <= 0.0 {
            return Err(BoundError::InvalidRelativeError(relative_error));
        }
        if !z_score.is_finite() || z_score <= 0.0 {
            return Err(BoundError::InvalidZScore(z_score));
        }
        Ok(SampleSizeQuery {
            alert_rate,
            relative_error,
            z_score,
        })
    }
}

/// Samples required so the observed alert rate stays within relative error
/// `δ` of the target rate `a` at confidence `z`: `⌈z²(1−a)/(δ²a)⌉`.
pub fn required_samples(query: &SampleSizeQuery) -> u64 {
    let SampleSizeQuery {
        alert_rate: a,
        relative_error: delta,
        z_score: z,
    } = *query;
    ((z * z * (1.0 - a)) / (delta * delta * a)).ceil() as u64
}

/// Monte Carlo check of the sample-size bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alert_rate: f64,
    pub relative_error: f64,
    pub z_score: f64,
    pub trials: u64,
    pub samples_per_trial: u64,
    pub threshold_rank: u64,
    /// Fraction of trials whose realized alert rate fell within the
    /// tolerated relative error of the target.
    pub coverage: f64,
    pub mean_threshold: f64,
    pub threshold_variance: f64,
    /// k/(n+1): the order-statistic expectation of the threshold.
    pub expected_mean: f64,
    /// a(1−a)/n: the asymptotic threshold variance.
    pub expected_variance: f64,
}

/// Validate the sample-size bound by simulation.
///
/// Each trial draws `n = required_samples` uniforms, selects the k-th
/// lowest as the decision threshold (with `(n−k)/n ≈ a`), and measures the
/// realized exceedance probability `1 − u₍k₎`. The reported coverage is
/// the fraction of trials within `δ·a` of the target rate, and should sit
/// near the confidence level implied by `z`.
pub fn validate_sample_size_bound(
    alert_rate: f64,
    relative_error: f64,
    z_score: f64,
    trials: u64,
    rng_seed: u64,
) -> Result<CoverageReport, BoundError> {
    let query = SampleSizeQuery::new(alert_rate, relative_error, z_score)?;
    if trials < 1000 {
        return Err(BoundError::TooFewTrials(trials));
    }
    let n = required_samples(&query).max(1);
    let k = (((n + 1) as f64) * (1.0 - alert_rate))
        .round()
        .clamp(1.0, n as f64) as u64;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut hits = 0u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut draws = vec![0.0f64; n as usize];
    for _ in 0..trials {
        for value in draws.iter_mut() {
            *value = rng.gen::<f64>();
        }
        let rank = (k - 1) as usize;
        draws.select_nth_unstable_by(rank, f64::total_cmp);
        let threshold = draws[rank];
        let realized_rate = 1.0 - threshold;
        if (realized_rate - alert_rate).abs() <= relative_error * alert_rate {
            hits += 1;
        }
        sum += threshold;
        sum_sq += threshold * threshold;
    }

    let t = trials as f64;
    let mean = sum / t;
    let variance = (sum_sq - t * mean * mean) / (t - 1.0);
    Ok(CoverageReport {
        alert_rate,
        relative_error,
        z_score,
        trials,
        samples_per_trial: n,
        threshold_rank: k,
        coverage: hits as f64 / t,
        mean_threshold: mean,
        threshold_variance: variance,
        expected_mean: k as f64 / (n + 1) as f64,
        expected_variance: alert_rate * (1.0 - alert_rate) / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn samples(scores: Vec<f64>) -> SampleSet {
        SampleSet::new(scores, "t", "p", None).unwrap()
    }

    #[test]
    fn empty_sample_set_rejected() {
        assert_eq!(
            SampleSet::new(vec![], "t", "p", None).unwrap_err(),
            FitError::EmptySampleSet
        );
        assert!(SampleSet::new(vec![1.2], "t", "p", None).is_err());
    }

    #[test]
    fn required_samples_matches_closed_form() {
        let q = SampleSizeQuery::new(0.01, 0.1, 1.96).unwrap();
        assert_eq!(required_samples(&q), 38032);

        let q = SampleSizeQuery::new(0.5, 1.0, 1.0).unwrap();
        assert_eq!(required_samples(&q), 1);

        // The implied normality condition n·a ≈ z²/δ² (exactly z²(1−a)/δ²)
        // holds by construction, keeping the bound self-consistent.
        let q = SampleSizeQuery::new(0.05, 0.2, 1.96).unwrap();
        let n = required_samples(&q) as f64;
        let exact = (1.96f64 / 0.2).powi(2) * 0.95;
        assert!((n * 0.05 - exact).abs() < 0.05);
        assert!((n * 0.05 / (1.96f64 / 0.2).powi(2) - 1.0).abs() < 0.1);
    }

    #[test]
    fn required_samples_is_monotone() {
        let grid = [0.001, 0.01, 0.05, 0.2, 0.5, 0.9];
        for pair in grid.windows(2) {
            let lo = required_samples(&SampleSizeQuery::new(pair[0], 0.1, 1.96).unwrap());
            let hi = required_samples(&SampleSizeQuery::new(pair[1], 0.1, 1.96).unwrap());
            assert!(lo > hi, "more samples needed at rarer alert rates");
        }
        for pair in [0.05, 0.1, 0.2, 0.5].windows(2) {
            let lo = required_samples(&SampleSizeQuery::new(0.01, pair[0], 1.96).unwrap());
            let hi = required_samples(&SampleSizeQuery::new(0.01, pair[1], 1.96).unwrap());
            assert!(lo > hi, "looser error tolerances need fewer samples");
        }
        for pair in [1.0, 1.64, 1.96, 2.58].windows(2) {
            let lo = required_samples(&SampleSizeQuery::new(0.01, 0.1, pair[0]).unwrap());
            let hi = required_samples(&SampleSizeQuery::new(0.01, 0.1, pair[1]).unwrap());
            assert!(lo < hi, "higher confidence needs more samples");
        }
    }

    #[test]
    fn uniform_fit_is_close_to_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let levels = default_levels();
        let fitted = fit_quantile_table(
            &samples(scores),
            &levels,
            &levels,
            "v1",
        )
        .unwrap();
        let sup = fitted
            .table
            .source_q()
            .iter()
            .zip(fitted.table.reference_q())
            .map(|(s, r)| (s - r).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 0.01, "sup distance from identity was {sup}");
        assert!(fitted.warning.is_some(), "1001 levels want ~384k samples");
    }

    #[test]
    fn degenerate_atom_collapses_to_three_knots() {
        let fitted = fit_quantile_table(
            &samples(vec![0.5; 1000]),
            &default_levels(),
            &default_levels(),
            "v1",
        )
        .unwrap();
        assert_eq!(fitted.table.knots(), 3);
        assert_eq!(fitted.table.source_q(), &[0.0, 0.5, 1.0]);
        assert_eq!(fitted.table.sample_count(), 1000);
    }

    #[test]
    fn unsorted_levels_rejected() {
        let err = fit_quantile_table(
            &samples(vec![0.5]),
            &[0.0, 0.6, 0.5, 1.0],
            &[0.0, 0.6, 0.5, 1.0],
            "v",
        )
        .unwrap_err();
        assert_eq!(err, FitError::LevelsNotSorted { index: 2 });
    }

    #[test]
    fn empirical_quantiles_monotone_in_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut sorted: Vec<f64> = (0..997).map(|_| rng.gen::<f64>()).collect();
        sorted.sort_by(f64::total_cmp);
        let mut previous = f64::NEG_INFINITY;
        for level in uniform_levels(101) {
            let q = empirical_quantile(&sorted, level);
            assert!(q >= previous);
            previous = q;
        }
    }

    #[test]
    fn coverage_close_to_confidence_level() {
        let report = validate_sample_size_bound(0.05, 0.2, 1.96, 2000, 42).unwrap();
        assert!(
            (0.92..=0.98).contains(&report.coverage),
            "coverage was {}",
            report.coverage
        );
        assert!((report.mean_threshold - report.expected_mean).abs() < 0.001);
        let ratio = report.threshold_variance / report.expected_variance;
        assert!((0.85..=1.15).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn infinite_tolerance_always_covers() {
        let report = validate_sample_size_bound(0.5, 1e9, 1.0, 1000, 1).unwrap();
        assert_eq!(report.coverage, 1.0);
    }

    #[test]
    fn too_few_trials_rejected() {
        assert_eq!(
            validate_sample_size_bound(0.5, 0.1, 1.0, 10, 1).unwrap_err(),
            BoundError::TooFewTrials(10)
        );
    }
}
