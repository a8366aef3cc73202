//! Cold-start prior fitting: a bimodal Beta mixture matched to a
//! predictor's training-score distribution by moment matching, selected by
//! Jensen-Shannon divergence, and inverted into a default quantile table
//! for tenants with no history.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use thiserror::Error;

use crate::quantile::FitError;
use crate::search::{differential_evolution, SearchOptions};
use crate::transforms::QuantileTable;

/// A fitted two-component Beta mixture over scores in [0, 1].
///
/// `w` is the positive-class prior, fixed from the labels rather than
/// optimized. `jsd` is the base-2 Jensen-Shannon divergence against the
/// empirical histogram that selected this fit among the search trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaMixtureFit {
    pub w: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub jsd: f64,
    pub trials_run: u32,
}

impl BetaMixtureFit {
    pub fn new(
        w: f64,
        alpha0: f64,
        beta0: f64,
        alpha1: f64,
        beta1: f64,
        jsd: f64,
        trials_run: u32,
    ) -> Result<Self, ColdstartError> {
        let fit = BetaMixtureFit {
            w,
            alpha0,
            beta0,
            alpha1,
            beta1,
            jsd,
            trials_run,
        };
        fit.validate()?;
        Ok(fit)
    }

    pub fn validate(&self) -> Result<(), ColdstartError> {
        let shapes = [self.alpha0, self.beta0, self.alpha1, self.beta1];
        if shapes.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(ColdstartError::InvalidShapes(shapes));
        }
        if !self.w.is_finite() || !(0.0..=1.0).contains(&self.w) {
            return Err(ColdstartError::InvalidWeight(self.w));
        }
        if !self.jsd.is_finite() || self.jsd < 0.0 {
            return Err(ColdstartError::InvalidWeight(self.jsd));
        }
        Ok(())
    }
}

/// Serialized fit document: the mixture parameters plus the seed that
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaMixtureFitDocument {
    pub w: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub jsd: f64,
    pub trials_run: u32,
    pub seed: u64,
}

impl BetaMixtureFitDocument {
    pub fn new(fit: &BetaMixtureFit, seed: u64) -> Self {
        BetaMixtureFitDocument {
            w: fit.w,
            alpha0: fit.alpha0,
            beta0: fit.beta0,
            alpha1: fit.alpha1,
            beta1: fit.beta1,
            jsd: fit.jsd,
            trials_run: fit.trials_run,
            seed,
        }
    }

    pub fn fit(&self) -> Result<BetaMixtureFit, ColdstartError> {
        BetaMixtureFit::new(
            self.w,
            self.alpha0,
            self.beta0,
            self.alpha1,
            self.beta1,
            self.jsd,
            self.trials_run,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColdstartError {
    #[error("mixture shape parameters must be positive and finite, got {0:?}")]
    InvalidShapes([f64; 4]),
    #[error("mixture weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("need at least {required} scored examples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
    #[error("scores and labels differ in length: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels are all one class; the positive prior cannot be fixed")]
    DegenerateLabels,
    #[error("score at index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize },
    #[error("histogram needs at least 2 bins")]
    TooFewBins,
    #[error("masses must be non-negative and sum to 1")]
    InvalidMasses,
    #[error("bin edges must be strictly increasing over [0, 1]")]
    InvalidEdges,
}

/// Histogram of a score sample: `B` bins over [0, 1] with masses summing
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    bin_edges: Vec<f64>,
    masses: Vec<f64>,
}

impl EmpiricalDensity {
    pub fn new(bin_edges: Vec<f64>, masses: Vec<f64>) -> Result<Self, ColdstartError> {
        if bin_edges.len() < 3 || bin_edges.len() != masses.len() + 1 {
            return Err(ColdstartError::TooFewBins);
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ColdstartError::InvalidEdges);
        }
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(ColdstartError::InvalidMasses);
        }
        Ok(EmpiricalDensity { bin_edges, masses })
    }

    /// Equal-width histogram of `scores` over [0, 1].
    pub fn from_scores(scores: &[f64], bins: usize) -> Result<Self, ColdstartError> {
        if bins < 2 {
            return Err(ColdstartError::TooFewBins);
        }
        if scores.is_empty() {
            return Err(ColdstartError::TooFewSamples {
                required: 1,
                actual: 0,
            });
        }
        let mut counts = vec![0u64; bins];
        for (index, score) in scores.iter().enumerate() {
            if !score.is_finite() || !(0.0..=1.0).contains(score) {
                return Err(ColdstartError::ScoreOutOfRange { index });
            }
            let bin = ((score * bins as f64) as usize).min(bins - 1);
            counts[bin] += 1;
        }
        let n = scores.len() as f64;
        let masses = counts.iter().map(|c| *c as f64 / n).collect();
        let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        EmpiricalDensity::new(bin_edges, masses)
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }
}

fn beta_pdf(y: f64, alpha: f64, beta: f64) -> f64 {
    if !(0.0..=1.0).contains(&y) {
        return 0.0;
    }
    if y == 0.0 {
        return match alpha {
            a if a < 1.0 => f64::INFINITY,
            a if a == 1.0 => beta,
            _ => 0.0,
        };
    }
    if y == 1.0 {
        return match beta {
            b if b < 1.0 => f64::INFINITY,
            b if b == 1.0 => alpha,
            _ => 0.0,
        };
    }
    ((alpha - 1.0) * y.ln() + (beta - 1.0) * (1.0 - y).ln() - ln_beta(alpha, beta)).exp()
}

/// Mixture density at `y`. May be infinite at the endpoints when a shape
/// parameter is below 1; integrate with [`mixture_bin_masses`] instead of
/// sampling the pdf there.
pub fn mixture_pdf(y: f64, fit: &BetaMixtureFit) -> f64 {
    (1.0 - fit.w) * beta_pdf(y, fit.alpha0, fit.beta0) + fit.w * beta_pdf(y, fit.alpha1, fit.beta1)
}

/// Mixture CDF at `y`, via the regularized incomplete Beta function.
pub fn mixture_cdf(y: f64, fit: &BetaMixtureFit) -> f64 {
    let y = y.clamp(0.0, 1.0);
    if y == 0.0 {
        return 0.0;
    }
    if y == 1.0 {
        return 1.0;
    }
    (1.0 - fit.w) * beta_reg(fit.alpha0, fit.beta0, y) + fit.w * beta_reg(fit.alpha1, fit.beta1, y)
}

/// Exact mixture mass of each histogram bin (safe at endpoint
/// singularities).
pub fn mixture_bin_masses(fit: &BetaMixtureFit, bin_edges: &[f64]) -> Vec<f64> {
    bin_edges
        .windows(2)
        .map(|edge| (mixture_cdf(edge[1], fit) - mixture_cdf(edge[0], fit)).max(0.0))
        .collect()
}

/// r-th raw moment of Beta(α, β): ∏_{j<r} (α+j)/(α+β+j).
fn beta_raw_moment(r: u32, alpha: f64, beta: f64) -> f64 {
    (0..r)
        .map(|j| (alpha + j as f64) / (alpha + beta + j as f64))
        .product()
}

/// r-th raw moment of the mixture, r in 1..=4.
pub fn mixture_raw_moment(r: u32, fit: &BetaMixtureFit) -> f64 {
    assert!((1..=4).contains(&r), "moment order {r} outside 1..=4");
    (1.0 - fit.w) * beta_raw_moment(r, fit.alpha0, fit.beta0)
        + fit.w * beta_raw_moment(r, fit.alpha1, fit.beta1)
}

/// First four raw moments of a sample.
pub fn empirical_raw_moments(scores: &[f64]) -> [f64; 4] {
    let n = scores.len() as f64;
    let mut sums = [0.0f64; 4];
    for score in scores {
        let mut power = 1.0;
        for sum in sums.iter_mut() {
            power *= score;
            *sum += power;
        }
    }
    sums.map(|s| s / n)
}

/// Moment-matching cost: Σ_{r=1..4} |μ_r − ȳ_r|^{2/r}. The r-th root
/// evens out the scale of the higher moments at the cost of
/// differentiability.
pub fn moment_loss(fit: &BetaMixtureFit, empirical_moments: &[f64; 4]) -> f64 {
    shape_moment_loss(
        fit.w,
        &[fit.alpha0, fit.beta0, fit.alpha1, fit.beta1],
        empirical_moments,
    )
}

fn shape_moment_loss(w: f64, shapes: &[f64], empirical_moments: &[f64; 4]) -> f64 {
    let mut loss = 0.0;
    for r in 1..=4u32 {
        let mixture = (1.0 - w) * beta_raw_moment(r, shapes[0], shapes[1])
            + w * beta_raw_moment(r, shapes[2], shapes[3]);
        let gap = (mixture - empirical_moments[(r - 1) as usize]).abs();
        loss += gap.powf(2.0 / r as f64);
    }
    loss
}

/// Base-2 Jensen-Shannon divergence between two discrete distributions on
/// the same support. Symmetric, zero iff equal, bounded by 1.
pub fn jensen_shannon_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share support");
    let mut divergence = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let mid = 0.5 * (pi + qi);
        if *pi > 0.0 {
            divergence += 0.5 * pi * (pi / mid).log2();
        }
        if *qi > 0.0 {
            divergence += 0.5 * qi * (qi / mid).log2();
        }
    }
    divergence.max(0.0)
}

/// Fitting configuration. The stochastic search box is expressed in
/// natural-log space over the shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColdstartConfig {
    pub search: SearchOptions,
    pub n_trials: u32,
    pub shape_min: f64,
    pub shape_max: f64,
    pub histogram_bins: usize,
}

impl Default for ColdstartConfig {
    fn default() -> Self {
        ColdstartConfig {
            search: SearchOptions::default(),
            n_trials: 8,
            shape_min: 0.05,
            shape_max: 500.0,
            histogram_bins: 100,
        }
    }
}

fn moment_residuals(w: f64, log_shapes: &[f64], targets: &[f64; 4], out: &mut [f64; 4]) {
    let shapes: [f64; 4] = [
        log_shapes[0].exp(),
        log_shapes[1].exp(),
        log_shapes[2].exp(),
        log_shapes[3].exp(),
    ];
    for r in 1..=4u32 {
        let mixture = (1.0 - w) * beta_raw_moment(r, shapes[0], shapes[1])
            + w * beta_raw_moment(r, shapes[2], shapes[3]);
        out[(r - 1) as usize] = mixture - targets[(r - 1) as usize];
    }
}

/// Solve `a · x = b` for a 4x4 system with partial pivoting. Returns
/// false when the matrix is numerically singular.
fn solve4(a: &mut [[f64; 4]; 4], b: &mut [f64; 4], x: &mut [f64; 4]) -> bool {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return false;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    for row in (0..4).rev() {
        let mut sum = b[row];
        for k in row + 1..4 {
            sum -= a[row][k] * x[k];
        }
        x[row] = sum / a[row][row];
    }
    true
}

/// Damped Newton refinement of the moment match: the stochastic search
/// lands in the right basin but crawls along the nearly flat valley the
/// root-unevened loss creates there, so we finish by solving the four
/// moment equations directly. Runs in log-shape space with box clamping
/// and backtracking on the residual norm; returns the input point when no
/// improvement is found.
fn polish_moment_match(
    w: f64,
    start: &[f64],
    targets: &[f64; 4],
    bounds: (f64, f64),
) -> Vec<f64> {
    let clamp = |x: &mut [f64; 4]| {
        for v in x.iter_mut() {
            *v = v.clamp(bounds.0, bounds.1);
        }
    };
    let ssq = |x: &[f64; 4]| {
        let mut g = [0.0; 4];
        moment_residuals(w, x, targets, &mut g);
        g.iter().map(|v| v * v).sum::<f64>()
    };

    let mut x: [f64; 4] = [start[0], start[1], start[2], start[3]];
    clamp(&mut x);
    let step_h = 1e-6;
    for _ in 0..60 {
        let base = ssq(&x);
        if base < 1e-28 {
            break;
        }
        let mut residual = [0.0; 4];
        moment_residuals(w, &x, targets, &mut residual);

        // Central-difference Jacobian of the residuals in log space.
        let mut jacobian = [[0.0f64; 4]; 4];
        for j in 0..4 {
            let mut forward = x;
            let mut backward = x;
            forward[j] += step_h;
            backward[j] -= step_h;
            let mut g_forward = [0.0; 4];
            let mut g_backward = [0.0; 4];
            moment_residuals(w, &forward, targets, &mut g_forward);
            moment_residuals(w, &backward, targets, &mut g_backward);
            for r in 0..4 {
                jacobian[r][j] = (g_forward[r] - g_backward[r]) / (2.0 * step_h);
            }
        }

        let mut improved = false;
        let mut damping = 0.0f64;
        for _ in 0..8 {
            let mut a = jacobian;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] += damping;
            }
            let mut rhs = residual.map(|v| -v);
            let mut direction = [0.0; 4];
            if solve4(&mut a, &mut rhs, &mut direction) {
                let mut step = 1.0;
                while step > 1e-6 {
                    let mut candidate = x;
                    for j in 0..4 {
                        candidate[j] += step * direction[j];
                    }
                    clamp(&mut candidate);
                    if ssq(&candidate) < base {
                        x = candidate;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
            }
            if improved {
                break;
            }
            damping = (damping * 10.0).max(1e-8);
        }
        if !improved {
            break;
        }
    }
    x.to_vec()
}

/// Fit the bimodal Beta mixture to labeled training scores.
///
/// The positive prior `w` is fixed from the labels. Each trial runs an
/// independent stochastic search minimizing the moment-matching loss over
/// the four shape parameters, then refines the match by damped Newton on
/// the moment residuals; the candidate minimizing the Jensen-Shannon
/// divergence against the empirical histogram wins, with ties broken by
/// trial order. Deterministic given (inputs, trials, seed).
pub fn fit_beta_mixture(
    scores: &[f64],
    labels: &[bool],
    n_trials: u32,
    rng_seed: u64,
) -> Result<BetaMixtureFit, ColdstartError> {
    fit_beta_mixture_with(
        scores,
        labels,
        &ColdstartConfig {
            n_trials,
            ..ColdstartConfig::default()
        },
        rng_seed,
    )
}

/// As [`fit_beta_mixture`] with explicit search configuration.
pub fn fit_beta_mixture_with(
    scores: &[f64],
    labels: &[bool],
    config: &ColdstartConfig,
    rng_seed: u64,
) -> Result<BetaMixtureFit, ColdstartError> {
    if scores.len() != labels.len() {
        return Err(ColdstartError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.len() < 100 {
        return Err(ColdstartError::TooFewSamples {
            required: 100,
            actual: scores.len(),
        });
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == labels.len() {
        return Err(ColdstartError::DegenerateLabels);
    }
    let w = positives as f64 / labels.len() as f64;

    let empirical_moments = empirical_raw_moments(scores);
    let histogram = EmpiricalDensity::from_scores(scores, config.histogram_bins)?;

    let log_bounds = [(config.shape_min.ln(), config.shape_max.ln()); 4];
    let n_trials = config.n_trials.max(1);
    let mut master = ChaCha8Rng::seed_from_u64(rng_seed);
    let trial_seeds: Vec<u64> = (0..n_trials).map(|_| master.gen()).collect();

    let mut best: Option<(f64, BetaMixtureFit)> = None;
    for seed in trial_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = differential_evolution(
            |log_shapes| {
                let shapes: Vec<f64> = log_shapes.iter().map(|l| l.exp()).collect();
                shape_moment_loss(w, &shapes, &empirical_moments)
            },
            &log_bounds,
            &config.search,
            &mut rng,
        );
        let polished = polish_moment_match(
            w,
            &result.best,
            &empirical_moments,
            (log_bounds[0].0, log_bounds[0].1),
        );
        let rough: Vec<f64> = result.best.iter().map(|l| l.exp()).collect();
        let refined: Vec<f64> = polished.iter().map(|l| l.exp()).collect();
        // Keep the refinement only when it helps the actual cost.
        let shapes = if shape_moment_loss(w, &refined, &empirical_moments)
            <= shape_moment_loss(w, &rough, &empirical_moments)
        {
            refined
        } else {
            rough
        };
        let candidate = BetaMixtureFit {
            w,
            alpha0: shapes[0],
            beta0: shapes[1],
            alpha1: shapes[2],
            beta1: shapes[3],
            jsd: 0.0,
            trials_run: n_trials,
        };
        let model_masses = mixture_bin_masses(&candidate, histogram.bin_edges());
        let jsd = jensen_shannon_divergence(histogram.masses(), &model_masses);
        let candidate = BetaMixtureFit { jsd, ..candidate };
        // Strict less-than keeps the earliest trial on ties.
        if best.as_ref().map_or(true, |(best_jsd, _)| jsd < *best_jsd) {
            best = Some((jsd, candidate));
        }
    }

    Ok(best.expect("at least one trial ran").1)
}

/// Invert the mixture CDF at `level` by bisection.
pub fn mixture_inverse_cdf(level: f64, fit: &BetaMixtureFit) -> f64 {
    let level = level.clamp(0.0, 1.0);
    if level == 0.0 {
        return 0.0;
    }
    if level == 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mid, fit) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Build the cold-start default quantile table `T^Q_v0` from a fitted
/// prior: source quantiles are the mixture's inverse CDF at each level.
/// `sample_count = 0` marks the table as cold-start.
pub fn default_quantile_table(
    fit: &BetaMixtureFit,
    reference_q: &[f64],
    levels: &[f64],
    version: impl Into<String>,
) -> Result<QuantileTable, FitError> {
    default_quantile_table_at(fit, reference_q, levels, version, Utc::now())
}

/// As [`default_quantile_table`] with an explicit timestamp.
pub fn default_quantile_table_at(
    fit: &BetaMixtureFit,
    reference_q: &[f64],
    levels: &[f64],
    version: impl Into<String>,
    fitted_at: DateTime<Utc>,
) -> Result<QuantileTable, FitError> {
    let mut source_q: Vec<f64> = levels
        .iter()
        .map(|level| mixture_inverse_cdf(*level, fit))
        .collect();
    if source_q.is_empty() || source_q.len() != reference_q.len() {
        return Err(FitError::InvalidLevels);
    }
    let last = source_q.len() - 1;
    source_q[0] = 0.0;
    source_q[last] = 1.0;
    Ok(QuantileTable::new(
        source_q,
        reference_q.to_vec(),
        version,
        fitted_at,
        0,
    )?)
}

/// Reference quantile vectors shipped with the toolkit.
pub mod reference {
    use super::*;

    /// The uniform reference: quantiles equal the levels.
    pub fn uniform(levels: &[f64]) -> Vec<f64> {
        levels.to_vec()
    }

    /// Parameters of the built-in skewed reference: most mass near zero
    /// with a long tail toward 1, giving fine threshold granularity in the
    /// sub-percent alert-rate region.
    pub fn skewed_mixture() -> BetaMixtureFit {
        BetaMixtureFit {
            w: 0.02,
            alpha0: 1.2,
            beta0: 18.0,
            alpha1: 5.0,
            beta1: 1.8,
            jsd: 0.0,
            trials_run: 0,
        }
    }

    /// Quantiles of the built-in skewed reference at the given levels.
    pub fn skewed(levels: &[f64]) -> Vec<f64> {
        let mixture = skewed_mixture();
        let mut quantiles: Vec<f64> = levels
            .iter()
            .map(|level| mixture_inverse_cdf(*level, &mixture))
            .collect();
        if let Some(first) = quantiles.first_mut() {
            *first = 0.0;
        }
        if let Some(last) = quantiles.last_mut() {
            *last = 1.0;
        }
        quantiles
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Bernoulli, Beta as BetaDist, Distribution};

    fn uniform_fit() -> BetaMixtureFit {
        BetaMixtureFit {
            w: 0.0,
            alpha0: 1.0,
            beta0: 1.0,
            alpha1: 1.0,
            beta1: 1.0,
            jsd: 0.0,
            trials_run: 0,
        }
    }

    #[test]
    fn uniform_mixture_density_is_flat() {
        let fit = uniform_fit();
        for y in [0.1, 0.25, 0.5, 0.75, 0.99] {
            assert!((mixture_pdf(y, &fit) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_mixture_is_symmetric() {
        let fit = BetaMixtureFit {
            w: 0.5,
            alpha0: 2.0,
            beta0: 5.0,
            alpha1: 5.0,
            beta1: 2.0,
            jsd: 0.0,
            trials_run: 0,
        };
        for y in [0.05, 0.2, 0.4, 0.45] {
            assert!((mixture_pdf(y, &fit) - mixture_pdf(1.0 - y, &fit)).abs() < 1e-10);
        }
    }

    #[test]
    fn beta22_mixture_density_at_center() {
        let fit = BetaMixtureFit {
            w: 0.5,
            alpha0: 2.0,
            beta0: 2.0,
            alpha1: 2.0,
            beta1: 2.0,
            jsd: 0.0,
            trials_run: 0,
        };
        assert!((mixture_pdf(0.5, &fit) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn raw_moments_match_closed_forms() {
        assert!((mixture_raw_moment(1, &uniform_fit()) - 0.5).abs() < 1e-15);

        let beta22 = BetaMixtureFit {
            w: 0.0,
            alpha0: 2.0,
            beta0: 2.0,
            ..uniform_fit()
        };
        assert!((mixture_raw_moment(2, &beta22) - 0.3).abs() < 1e-15);

        let beta51 = BetaMixtureFit {
            w: 1.0,
            alpha1: 5.0,
            beta1: 1.0,
            ..uniform_fit()
        };
        assert!((mixture_raw_moment(1, &beta51) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        // Simpson integration of y^r * pdf as an independent oracle.
        let fit = BetaMixtureFit {
            w: 0.3,
            alpha0: 2.0,
            beta0: 6.0,
            alpha1: 7.0,
            beta1: 1.5,
            jsd: 0.0,
            trials_run: 0,
        };
        let steps = 20_000;
        for r in 1..=4u32 {
            let h = 1.0 / steps as f64;
            let mut integral = 0.0;
            for i in 0..steps {
                let a = i as f64 * h;
                let m = a + 0.5 * h;
                let b = a + h;
                let f = |y: f64| y.powi(r as i32) * mixture_pdf(y, &fit);
                integral += h / 6.0 * (f(a) + 4.0 * f(m) + f(b));
            }
            assert!(
                (integral - mixture_raw_moment(r, &fit)).abs() < 1e-6,
                "moment {r} mismatch"
            );
        }
    }

    #[test]
    fn moment_loss_matches_hand_computation() {
        let fit = uniform_fit();
        let exact = [0.5, 1.0 / 3.0, 0.25, 0.2];
        assert!(moment_loss(&fit, &exact) < 1e-15);

        let mut off_first = exact;
        off_first[0] += 0.1;
        assert!((moment_loss(&fit, &off_first) - 0.01).abs() < 1e-12);

        let mut off_fourth = exact;
        off_fourth[3] += 0.1;
        assert!((moment_loss(&fit, &off_fourth) - 0.01f64.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn jsd_properties() {
        let p = [0.2, 0.3, 0.5];
        let q = [0.5, 0.25, 0.25];
        assert_eq!(jensen_shannon_divergence(&p, &p), 0.0);
        let forward = jensen_shannon_divergence(&p, &q);
        let backward = jensen_shannon_divergence(&q, &p);
        assert!((forward - backward).abs() < 1e-15);
        assert!(forward > 0.0 && forward <= 1.0);

        // Disjoint support reaches the base-2 upper bound.
        assert!((jensen_shannon_divergence(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_monotone_and_normalized() {
        let fit = BetaMixtureFit {
            w: 0.01,
            alpha0: 0.8,
            beta0: 20.0,
            alpha1: 8.0,
            beta1: 2.0,
            jsd: 0.0,
            trials_run: 0,
        };
        let mut previous = 0.0;
        for i in 0..=1000 {
            let y = i as f64 / 1000.0;
            let cdf = mixture_cdf(y, &fit);
            assert!(cdf >= previous - 1e-12);
            previous = cdf;
        }
        assert!((mixture_cdf(1.0, &fit) - 1.0).abs() < 1e-6);
        let masses = mixture_bin_masses(&fit, &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_cdf_round_trips() {
        let fit = BetaMixtureFit {
            w: 0.3,
            alpha0: 2.0,
            beta0: 5.0,
            alpha1: 5.0,
            beta1: 2.0,
            jsd: 0.0,
            trials_run: 0,
        };
        for i in 1..=9 {
            let y = i as f64 / 10.0;
            let round_trip = mixture_inverse_cdf(mixture_cdf(y, &fit), &fit);
            assert!((round_trip - y).abs() < 1e-6, "round trip at {y}");
        }
    }

    #[test]
    fn default_table_from_uniform_prior_is_identity() {
        let levels = crate::quantile::uniform_levels(101);
        let table = default_quantile_table(&uniform_fit(), &levels, &levels, "v0").unwrap();
        assert_eq!(table.sample_count(), 0);
        for (s, r) in table.source_q().iter().zip(table.reference_q()) {
            assert!((s - r).abs() < 1e-9);
        }
    }

    #[test]
    fn skewed_prior_compresses_low_levels() {
        let fit = BetaMixtureFit {
            w: 0.01,
            alpha0: 1.0,
            beta0: 30.0,
            alpha1: 8.0,
            beta1: 2.0,
            jsd: 0.0,
            trials_run: 0,
        };
        let levels = crate::quantile::uniform_levels(101);
        let table = default_quantile_table(&fit, &levels, &levels, "v0").unwrap();
        // Half the mass sits below ~0.023 for Beta(1, 30); mapping expands it.
        let mid = table.source_q()[50];
        assert!(mid < 0.1, "median source quantile was {mid}");
    }

    fn draw_mixture(
        n: usize,
        w: f64,
        neg: (f64, f64),
        pos: (f64, f64),
        seed: u64,
    ) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let label_dist = Bernoulli::new(w).unwrap();
        let neg_dist = BetaDist::new(neg.0, neg.1).unwrap();
        let pos_dist = BetaDist::new(pos.0, pos.1).unwrap();
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = label_dist.sample(&mut rng);
            let score = if label {
                pos_dist.sample(&mut rng)
            } else {
                neg_dist.sample(&mut rng)
            };
            scores.push(score.clamp(0.0, 1.0));
            labels.push(label);
        }
        (scores, labels)
    }

    #[test]
    fn recovers_a_known_mixture() {
        let (scores, labels) = draw_mixture(20_000, 0.01, (1.0, 20.0), (8.0, 2.0), 17);
        let fit = fit_beta_mixture(&scores, &labels, 4, 99).unwrap();
        assert!(fit.jsd < 0.01, "selected jsd {}", fit.jsd);
        let empirical = empirical_raw_moments(&scores);
        for r in 1..=4u32 {
            let fitted = mixture_raw_moment(r, &fit);
            let observed = empirical[(r - 1) as usize];
            assert!(
                (fitted - observed).abs() / observed < 0.02,
                "moment {r}: fitted {fitted} vs empirical {observed}"
            );
        }
    }

    #[test]
    fn uniform_scores_fit_near_uniform_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = (0..20_000).map(|i| i % 2 == 0).collect();
        let fit = fit_beta_mixture(&scores, &labels, 4, 7).unwrap();
        let targets = [0.5, 1.0 / 3.0, 0.25, 0.2];
        for (r, target) in (1..=4u32).zip(targets) {
            let fitted = mixture_raw_moment(r, &fit);
            assert!(
                (fitted - target).abs() / target < 0.02,
                "moment {r}: {fitted} vs {target}"
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (scores, labels) = draw_mixture(5_000, 0.05, (1.0, 10.0), (6.0, 2.0), 3);
        let config = ColdstartConfig {
            n_trials: 2,
            search: SearchOptions {
                generations: 60,
                ..SearchOptions::default()
            },
            ..ColdstartConfig::default()
        };
        let first = fit_beta_mixture_with(&scores, &labels, &config, 11).unwrap();
        let second = fit_beta_mixture_with(&scores, &labels, &config, 11).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let scores = vec![0.5; 200];
        let labels = vec![false; 200];
        assert_eq!(
            fit_beta_mixture(&scores, &labels, 1, 0).unwrap_err(),
            ColdstartError::DegenerateLabels
        );
    }

    #[test]
    fn built_in_references_are_valid_quantile_vectors() {
        let levels = crate::quantile::uniform_levels(201);
        for reference in [reference::uniform(&levels), reference::skewed(&levels)] {
            assert_eq!(reference.len(), levels.len());
            assert_eq!(reference[0], 0.0);
            assert_eq!(*reference.last().unwrap(), 1.0);
            assert!(reference.windows(2).all(|w| w[1] > w[0]));
        }
        // The skewed reference concentrates mass near zero.
        let skewed = reference::skewed(&levels);
        assert!(skewed[100] < 0.15, "median was {}", skewed[100]);
    }
}
