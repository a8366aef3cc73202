//! Population-based stochastic search over a bounded box (classic
//! rand/1/bin differential evolution). The cold-start fitter uses it
//! because its moment-matching loss is non-differentiable.

use rand::Rng;

/// Search hyperparameters. Defaults are conservative for low-dimensional
/// shape fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub population: usize,
    pub generations: usize,
    /// Differential weight applied to the donor difference vector.
    pub mutation_factor: f64,
    /// Per-coordinate crossover probability.
    pub crossover_rate: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            population: 32,
            generations: 300,
            mutation_factor: 0.7,
            crossover_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub evaluations: u64,
}

/// Minimize `objective` over the axis-aligned box `bounds`.
///
/// Panics if `bounds` is empty, any interval is inverted, or the
/// population is smaller than 4 (the donor selection needs three distinct
/// partners).
pub fn differential_evolution<F, R>(
    objective: F,
    bounds: &[(f64, f64)],
    options: &SearchOptions,
    rng: &mut R,
) -> SearchResult
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = bounds.len();
    assert!(dim > 0, "bounds must be non-empty");
    assert!(options.population >= 4, "population must be at least 4");
    for (lo, hi) in bounds {
        assert!(lo < hi, "invalid bound ({lo}, {hi})");
    }

    let mut population: Vec<Vec<f64>> = (0..options.population)
        .map(|_| {
            bounds
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect()
        })
        .collect();
    let mut fitness: Vec<f64> = population.iter().map(|x| objective(x)).collect();
    let mut evaluations = options.population as u64;

    let mut best_index = 0;
    for (index, value) in fitness.iter().enumerate() {
        if *value < fitness[best_index] {
            best_index = index;
        }
    }

    let mut trial = vec![0.0; dim];
    for _ in 0..options.generations {
        for i in 0..options.population {
            // Three distinct partners, none equal to i.
            let mut partners = [0usize; 3];
            let mut chosen = 0;
            while chosen < 3 {
                let candidate = rng.gen_range(0..options.population);
                if candidate != i && !partners[..chosen].contains(&candidate) {
                    partners[chosen] = candidate;
                    chosen += 1;
                }
            }
            let [r0, r1, r2] = partners;

            let forced = rng.gen_range(0..dim);
            for j in 0..dim {
                let mutate = j == forced || rng.gen::<f64>() < options.crossover_rate;
                trial[j] = if mutate {
                    let donor = population[r0][j]
                        + options.mutation_factor * (population[r1][j] - population[r2][j]);
                    donor.clamp(bounds[j].0, bounds[j].1)
                } else {
                    population[i][j]
                };
            }

            let trial_value = objective(&trial);
            evaluations += 1;
            if trial_value <= fitness[i] {
                population[i].copy_from_slice(&trial);
                fitness[i] = trial_value;
                if trial_value < fitness[best_index] {
                    best_index = i;
                }
            }
        }
    }

    SearchResult {
        best: population[best_index].clone(),
        best_value: fitness[best_index],
        evaluations,
    }
}
