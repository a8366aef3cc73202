//! The composable score transformations: per-expert posterior correction,
//! weighted aggregation, and piecewise-linear quantile mapping, plus the
//! predictor pipeline that composes them.
//!
//! All three transforms are monotone non-decreasing on `[0, 1]`, so the
//! ranking of events is preserved end to end.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendRegistry};
use crate::types::{Event, PredictorSpec, Score, ScoreResponse};

/// Paired source/reference quantiles defining a monotone piecewise-linear
/// map from one score distribution onto another.
///
/// Source endpoints are pinned to 0 and 1 so no input ever falls outside
/// the knot range, and consecutive equal source quantiles (mass atoms) are
/// collapsed into a single knot at construction, keeping every retained
/// segment's source width positive. The mapped value at an atom is the
/// reference quantile at the collapsed run's upper index.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "QuantileTableDoc")]
pub struct QuantileTable {
    source_q: Vec<f64>,
    reference_q: Vec<f64>,
    version: String,
    fitted_at: DateTime<Utc>,
    sample_count: u64,
}

/// JSON document form: `{version, fitted_at, sample_count, source_q, reference_q}`.
/// The metadata fields are defaulted on input so hand-written documents
/// (e.g. inline identity tables) stay short; output always carries all five.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantileTableDoc {
    #[serde(default = "unversioned")]
    version: String,
    #[serde(default = "epoch")]
    fitted_at: DateTime<Utc>,
    #[serde(default)]
    sample_count: u64,
    source_q: Vec<f64>,
    reference_q: Vec<f64>,
}

fn unversioned() -> String {
    "unversioned".to_string()
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

impl From<QuantileTable> for QuantileTableDoc {
    fn from(table: QuantileTable) -> Self {
        QuantileTableDoc {
            version: table.version,
            fitted_at: table.fitted_at,
            sample_count: table.sample_count,
            source_q: table.source_q,
            reference_q: table.reference_q,
        }
    }
}

impl<'de> Deserialize<'de> for QuantileTable {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let doc = QuantileTableDoc::deserialize(deserializer)?;
        QuantileTable::new(
            doc.source_q,
            doc.reference_q,
            doc.version,
            doc.fitted_at,
            doc.sample_count,
        )
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("quantile table needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("source and reference quantile counts differ: {source_len} vs {reference_len}")]
    LengthMismatch {
        source_len: usize,
        reference_len: usize,
    },
    #[error("quantile at index {index} is not a finite value in [0, 1]")]
    OutOfRange { index: usize },
    #[error("source quantiles must be non-decreasing (violated at index {index})")]
    SourceNotMonotone { index: usize },
    #[error("reference quantiles must be strictly increasing (violated at index {index})")]
    ReferenceNotMonotone { index: usize },
    #[error("source quantiles must start at 0 and end at 1")]
    SourceEndpointsNotPinned,
    #[error("reference quantiles must start at 0 and end at 1")]
    ReferenceEndpointsNotPinned,
}

impl QuantileTable {
    pub fn new(
        source_q: Vec<f64>,
        reference_q: Vec<f64>,
        version: impl Into<String>,
        fitted_at: DateTime<Utc>,
        sample_count: u64,
    ) -> Result<Self, TableError> {
        if source_q.len() != reference_q.len() {
            return Err(TableError::LengthMismatch {
                source_len: source_q.len(),
                reference_len: reference_q.len(),
            });
        }
        if source_q.len() < 2 {
            return Err(TableError::TooFewKnots(source_q.len()));
        }
        for (index, value) in source_q.iter().chain(reference_q.iter()).enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(value) {
                return Err(TableError::OutOfRange {
                    index: index % source_q.len(),
                });
            }
        }
        for index in 1..source_q.len() {
            if source_q[index] < source_q[index - 1] {
                return Err(TableError::SourceNotMonotone { index });
            }
            if reference_q[index] <= reference_q[index - 1] {
                return Err(TableError::ReferenceNotMonotone { index });
            }
        }
        if source_q[0] != 0.0 || *source_q.last().unwrap() != 1.0 {
            return Err(TableError::SourceEndpointsNotPinned);
        }
        if reference_q[0] != 0.0 || *reference_q.last().unwrap() != 1.0 {
            return Err(TableError::ReferenceEndpointsNotPinned);
        }
        let (source_q, reference_q) = collapse_ties(source_q, reference_q);
        Ok(QuantileTable {
            source_q,
            reference_q,
            version: version.into(),
            fitted_at,
            sample_count,
        })
    }

    /// The two-knot identity map.
    pub fn identity(version: impl Into<String>) -> Self {
        QuantileTable {
            source_q: vec![0.0, 1.0],
            reference_q: vec![0.0, 1.0],
            version: version.into(),
            fitted_at: DateTime::<Utc>::UNIX_EPOCH,
            sample_count: 0,
        }
    }

    pub fn source_q(&self) -> &[f64] {
        &self.source_q
    }

    pub fn reference_q(&self) -> &[f64] {
        &self.reference_q
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn fitted_at(&self) -> DateTime<Utc> {
        self.fitted_at
    }

    /// Number of samples the table was fitted from; 0 marks a cold-start table.
    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn knots(&self) -> usize {
        self.source_q.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(document: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(document)
    }
}

/// Collapse runs of equal source quantiles to the run's upper index.
/// Inputs are already monotone; output source is strictly increasing.
fn collapse_ties(source_q: Vec<f64>, reference_q: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut source = Vec::with_capacity(source_q.len());
    let mut reference = Vec::with_capacity(reference_q.len());
    for index in 0..source_q.len() {
        let last_of_run = index + 1 == source_q.len() || source_q[index + 1] > source_q[index];
        if last_of_run {
            source.push(source_q[index]);
            reference.push(reference_q[index]);
        }
    }
    (source, reference)
}

/// Normalized non-negative aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    weights: Vec<f64>,
}

impl AggregationSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self, TransformError> {
        if weights.is_empty() {
            return Err(TransformError::EmptyWeights);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(TransformError::WeightsNotNormalized { sum });
        }
        Ok(AggregationSpec { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("aggregation weights must be non-empty")]
    EmptyWeights,
    #[error("aggregation weights must be non-negative and sum to 1 (sum = {sum})")]
    WeightsNotNormalized { sum: f64 },
    #[error("{scores} scores cannot be aggregated with {weights} weights")]
    LengthMismatch { scores: usize, weights: usize },
}

/// Reverse the score bias induced by undersampling the negative class at
/// ratio `beta` during training: `β·ỹ / (1 − (1−β)·ỹ)`.
///
/// Identity at `beta = 1`; fixes 0 and 1; strictly increasing in `ỹ`.
pub fn posterior_correct(y_raw: Score, beta: f64) -> Score {
    assert!(
        beta.is_finite() && beta > 0.0 && beta <= 1.0,
        "undersampling ratio {beta} outside (0, 1]"
    );
    let y = y_raw.value();
    Score::clamped(beta * y / (1.0 - (1.0 - beta) * y))
}

/// Weighted average of calibrated scores. The result lies within
/// `[min(scores), max(scores)]`.
pub fn aggregate(corrected: &[Score], spec: &AggregationSpec) -> Result<Score, TransformError> {
    if corrected.len() != spec.weights().len() {
        return Err(TransformError::LengthMismatch {
            scores: corrected.len(),
            weights: spec.weights().len(),
        });
    }
    let combined: f64 = corrected
        .iter()
        .zip(spec.weights())
        .map(|(score, weight)| weight * score.value())
        .sum();
    let lo = corrected.iter().map(|s| s.value()).fold(f64::INFINITY, f64::min);
    let hi = corrected
        .iter()
        .map(|s| s.value())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Score::clamped(combined.clamp(lo, hi)))
}

/// Map a score through the piecewise-linear quantile table.
///
/// The owning segment `[q_i^S, q_{i+1}^S)` is located by binary search;
/// the last segment is closed, so `y = 1` maps to the final reference
/// quantile.
pub fn quantile_map(y: Score, table: &QuantileTable) -> Score {
    let value = y.value();
    let source = table.source_q();
    let reference = table.reference_q();
    let last = source.len() - 1;
    if value >= source[last] {
        return Score::clamped(reference[last]);
    }
    // partition_point returns the first index with source > value; the
    // segment start is the index before it. source[0] = 0 <= value keeps
    // the subtraction safe.
    let i = source.partition_point(|knot| *knot <= value) - 1;
    let width = source[i + 1] - source[i];
    let slope = (reference[i + 1] - reference[i]) / width;
    let mapped = reference[i] + (value - source[i]) * slope;
    Score::clamped(mapped.clamp(reference[i], reference[i + 1]))
}

/// Immutable map from table reference to quantile table.
#[derive(Debug, Clone, Default)]
pub struct TableRegistry {
    tables: BTreeMap<String, Arc<QuantileTable>>,
}

impl TableRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table_ref: impl Into<String>, table: QuantileTable) {
        self.tables.insert(table_ref.into(), Arc::new(table));
    }

    pub fn get(&self, table_ref: &str) -> Option<&Arc<QuantileTable>> {
        self.tables.get(table_ref)
    }

    /// Copy-on-write replacement of one table; returns the new registry and
    /// the previous version under that reference, if any.
    pub fn with_table(&self, table_ref: &str, table: QuantileTable) -> (Self, Option<String>) {
        let mut tables = self.tables.clone();
        let previous = tables
            .insert(table_ref.to_string(), Arc::new(table))
            .map(|t| t.version().to_string());
        (TableRegistry { tables }, previous)
    }

    pub fn versions(&self) -> BTreeMap<String, String> {
        self.tables
            .iter()
            .map(|(k, v)| (k.clone(), v.version().to_string()))
            .collect()
    }

    pub fn refs(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

/// Everything a predictor needs to execute besides its own spec.
#[derive(Clone, Copy)]
pub struct ExecContext<'a> {
    pub backends: &'a BackendRegistry,
    pub tables: &'a TableRegistry,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("backend for model {model_id:?} unavailable: {reason}")]
    BackendUnavailable { model_id: String, reason: String },
    #[error("quantile table {table_ref:?} not registered")]
    UnknownTable { table_ref: String },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Execute a predictor DAG for one event.
///
/// Ensembles run posterior correction per expert (when enabled), weighted
/// aggregation, then quantile mapping. Single-expert predictors skip
/// correction and aggregation and map the raw score directly.
pub fn predict(
    event: &Event,
    spec: &PredictorSpec,
    ctx: ExecContext<'_>,
) -> Result<ScoreResponse, PredictError> {
    let started = Instant::now();
    let table = ctx
        .tables
        .get(&spec.quantile_table_ref)
        .ok_or_else(|| PredictError::UnknownTable {
            table_ref: spec.quantile_table_ref.clone(),
        })?;

    let mut raw_scores = Vec::with_capacity(spec.experts.len());
    for expert in &spec.experts {
        let raw = ctx
            .backends
            .score(&expert.backend_ref, event)
            .map_err(|err: BackendError| PredictError::BackendUnavailable {
                model_id: expert.model_id.clone(),
                reason: err.to_string(),
            })?;
        raw_scores.push(raw);
    }

    let aggregated = if spec.experts.len() == 1 {
        raw_scores[0]
    } else {
        let calibrated: Vec<Score> = if spec.apply_posterior_correction {
            raw_scores
                .iter()
                .zip(&spec.experts)
                .map(|(raw, expert)| posterior_correct(*raw, expert.undersampling_ratio))
                .collect()
        } else {
            raw_scores
        };
        let weights = AggregationSpec::new(spec.aggregation_weights.clone())
            .expect("predictor weights normalized at load");
        aggregate(&calibrated, &weights)?
    };

    Ok(ScoreResponse {
        event_id: event.event_id.clone(),
        predictor_id: spec.predictor_id.clone(),
        score: quantile_map(aggregated, table),
        latency_micros: started.elapsed().as_micros() as u64,
        shadow: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::testutil::registry;
    use crate::types::ExpertSpec;
    use indexmap::IndexMap;
    use proptest::prelude::*;

    fn score(v: f64) -> Score {
        Score::new(v).unwrap()
    }

    fn table(source: &[f64], reference: &[f64]) -> QuantileTable {
        QuantileTable::new(
            source.to_vec(),
            reference.to_vec(),
            "test",
            DateTime::<Utc>::UNIX_EPOCH,
            0,
        )
        .unwrap()
    }

    #[test]
    fn posterior_correction_matches_closed_form() {
        assert_eq!(posterior_correct(score(0.5), 1.0).value(), 0.5);
        assert_eq!(posterior_correct(score(0.0), 0.02).value(), 0.0);
        assert_eq!(posterior_correct(score(1.0), 0.5).value(), 1.0);
        let corrected = posterior_correct(score(0.5), 0.02).value();
        assert!((corrected - 0.01 / 0.51).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_a_weighted_mean() {
        let mean = aggregate(
            &[score(0.2), score(0.4)],
            &AggregationSpec::new(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert!((mean.value() - 0.3).abs() < 1e-15);

        let identity = aggregate(&[score(0.7)], &AggregationSpec::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(identity.value(), 0.7);

        let weighted = aggregate(
            &[score(0.1), score(0.9)],
            &AggregationSpec::new(vec![0.25, 0.75]).unwrap(),
        )
        .unwrap();
        assert!((weighted.value() - 0.7).abs() < 1e-15);

        assert!(matches!(
            aggregate(&[score(0.1)], &AggregationSpec::new(vec![0.5, 0.5]).unwrap()),
            Err(TransformError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn quantile_map_interpolates() {
        let identity = table(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]);
        assert!((quantile_map(score(0.37), &identity).value() - 0.37).abs() < 1e-15);

        let stretch = table(&[0.0, 0.2, 1.0], &[0.0, 0.5, 1.0]);
        assert!((quantile_map(score(0.1), &stretch).value() - 0.25).abs() < 1e-15);
        assert_eq!(quantile_map(score(1.0), &stretch).value(), 1.0);
        assert_eq!(quantile_map(score(0.0), &stretch).value(), 0.0);
    }

    #[test]
    fn atoms_collapse_to_upper_reference() {
        // Mass atom at 0.5 spanning reference quantiles 0.2..0.8.
        let atom = table(&[0.0, 0.5, 0.5, 0.5, 1.0], &[0.0, 0.2, 0.5, 0.8, 1.0]);
        assert_eq!(atom.knots(), 3);
        assert_eq!(quantile_map(score(0.5), &atom).value(), 0.8);
    }

    #[test]
    fn invalid_tables_rejected() {
        let fitted = DateTime::<Utc>::UNIX_EPOCH;
        assert!(matches!(
            QuantileTable::new(vec![0.0], vec![0.0], "v", fitted, 0),
            Err(TableError::TooFewKnots(1))
        ));
        assert!(matches!(
            QuantileTable::new(vec![0.0, 0.6, 0.4, 1.0], vec![0.0, 0.1, 0.2, 1.0], "v", fitted, 0),
            Err(TableError::SourceNotMonotone { index: 2 })
        ));
        assert!(matches!(
            QuantileTable::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.0, 1.0], "v", fitted, 0),
            Err(TableError::ReferenceNotMonotone { index: 1 })
        ));
        assert!(matches!(
            QuantileTable::new(vec![0.1, 1.0], vec![0.0, 1.0], "v", fitted, 0),
            Err(TableError::SourceEndpointsNotPinned)
        ));
    }

    #[test]
    fn table_json_round_trip() {
        let original = table(&[0.0, 0.2, 1.0], &[0.0, 0.5, 1.0]);
        let document = original.to_json();
        let parsed = QuantileTable::from_json(&document).unwrap();
        assert_eq!(parsed, original);
        // Field order in the document is fixed.
        let version_at = document.find("\"version\"").unwrap();
        let source_at = document.find("\"source_q\"").unwrap();
        assert!(version_at < source_at);
    }

    #[test]
    fn invalid_table_documents_rejected() {
        let bad = r#"{"version":"v","fitted_at":"2024-01-01T00:00:00Z","sample_count":0,
                      "source_q":[0.0,1.0],"reference_q":[0.4,0.2]}"#;
        assert!(QuantileTable::from_json(bad).is_err());
    }

    fn two_expert_spec(beta1: f64, beta2: f64, correct: bool) -> PredictorSpec {
        PredictorSpec::new(
            "p".into(),
            vec![
                ExpertSpec {
                    model_id: "m1".into(),
                    backend_ref: "b1".into(),
                    undersampling_ratio: beta1,
                },
                ExpertSpec {
                    model_id: "m2".into(),
                    backend_ref: "b2".into(),
                    undersampling_ratio: beta2,
                },
            ],
            vec![0.5, 0.5],
            "identity".into(),
            correct,
        )
        .unwrap()
    }

    fn test_event() -> Event {
        let mut features = IndexMap::new();
        features.insert("x".to_string(), 0.5);
        Event {
            event_id: "e1".into(),
            tenant_id: "t".into(),
            geography: String::new(),
            schema_id: String::new(),
            features,
            tags: Default::default(),
        }
    }

    #[test]
    fn predict_composes_the_pipeline() {
        let backends = registry(&[("b1", 0.5), ("b2", 0.5)]);
        let mut tables = TableRegistry::new();
        tables.insert("identity", QuantileTable::identity("v0"));
        let ctx = ExecContext {
            backends: &backends,
            tables: &tables,
        };

        let response = predict(&test_event(), &two_expert_spec(0.02, 1.0, true), ctx).unwrap();
        let expected = 0.5 * (0.01 / 0.51) + 0.5 * 0.5;
        assert!((response.score.value() - expected).abs() < 1e-9);
        assert!(!response.shadow);

        // Correction disabled: plain mean of raw scores.
        let response = predict(&test_event(), &two_expert_spec(0.02, 1.0, false), ctx).unwrap();
        assert!((response.score.value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_expert_skips_correction_and_aggregation() {
        let backends = registry(&[("b1", 0.5)]);
        let mut tables = TableRegistry::new();
        tables.insert("identity", QuantileTable::identity("v0"));
        let spec = PredictorSpec::new(
            "p".into(),
            vec![ExpertSpec {
                model_id: "m1".into(),
                backend_ref: "b1".into(),
                undersampling_ratio: 0.02,
            }],
            vec![1.0],
            "identity".into(),
            true,
        )
        .unwrap();
        let response = predict(
            &test_event(),
            &spec,
            ExecContext {
                backends: &backends,
                tables: &tables,
            },
        )
        .unwrap();
        assert_eq!(response.score.value(), 0.5);
    }

    #[test]
    fn unavailable_backend_fails_the_request() {
        let backends = registry(&[("b1", 0.5)]);
        let mut tables = TableRegistry::new();
        tables.insert("identity", QuantileTable::identity("v0"));
        let err = predict(
            &test_event(),
            &two_expert_spec(0.5, 0.5, true),
            ExecContext {
                backends: &backends,
                tables: &tables,
            },
        )
        .unwrap_err();
        assert!(matches!(err, PredictError::BackendUnavailable { model_id, .. } if model_id == "m2"));
    }

    /// Brute-force re-implementation of the mapped-score pipeline used as
    /// an independent oracle: linear scan instead of binary search.
    fn naive_quantile_map(y: f64, source: &[f64], reference: &[f64]) -> f64 {
        let last = source.len() - 1;
        if y >= source[last] {
            return reference[last];
        }
        for i in 0..last {
            if source[i] <= y && y < source[i + 1] {
                return reference[i]
                    + (y - source[i]) * (reference[i + 1] - reference[i])
                        / (source[i + 1] - source[i]);
            }
        }
        unreachable!("pinned endpoints cover [0, 1]");
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(
            mut a in 0.0f64..=1.0,
            mut b in 0.0f64..=1.0,
            beta in 0.001f64..=1.0,
            knots in proptest::collection::vec(0.0f64..=1.0, 0..12),
        ) {
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            let low = posterior_correct(score(a), beta);
            let high = posterior_correct(score(b), beta);
            prop_assert!(low.value() <= high.value());
            prop_assert!((0.0..=1.0).contains(&low.value()));

            // Random valid table: sorted interior knots with jittered
            // reference to keep it strictly increasing.
            let mut source: Vec<f64> = knots.clone();
            source.push(0.0);
            source.push(1.0);
            source.sort_by(f64::total_cmp);
            let n = source.len();
            let reference: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let table = QuantileTable::new(
                source, reference, "prop", DateTime::<Utc>::UNIX_EPOCH, 0,
            ).unwrap();
            let mapped_low = quantile_map(low, &table);
            let mapped_high = quantile_map(high, &table);
            prop_assert!(mapped_low.value() <= mapped_high.value());
            prop_assert!((0.0..=1.0).contains(&mapped_low.value()));
        }

        #[test]
        fn bias_inversion_recovers_the_posterior(
            p in 0.0f64..=1.0,
            beta in 0.001f64..=1.0,
        ) {
            let biased = p / (p + beta * (1.0 - p));
            let recovered = posterior_correct(score(biased), beta).value();
            prop_assert!((recovered - p).abs() <= 1e-12);
        }

        #[test]
        fn identity_table_is_a_fixed_point(y in 0.0f64..=1.0, n in 2usize..32) {
            let levels: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let table = QuantileTable::new(
                levels.clone(), levels, "id", DateTime::<Utc>::UNIX_EPOCH, 0,
            ).unwrap();
            prop_assert!((quantile_map(score(y), &table).value() - y).abs() <= 1e-12);
        }

        #[test]
        fn binary_search_matches_linear_scan(
            y in 0.0f64..=1.0,
            interior in proptest::collection::vec(0.0f64..=1.0, 0..30),
        ) {
            let mut source = interior.clone();
            source.push(0.0);
            source.push(1.0);
            source.sort_by(f64::total_cmp);
            let n = source.len();
            let reference: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let table = QuantileTable::new(
                source, reference, "prop", DateTime::<Utc>::UNIX_EPOCH, 0,
            ).unwrap();
            let fast = quantile_map(score(y), &table).value();
            let slow = naive_quantile_map(y, table.source_q(), table.reference_q());
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn aggregate_stays_in_hull(
            values in proptest::collection::vec(0.0f64..=1.0, 1..6),
            raw_weights in proptest::collection::vec(0.01f64..=1.0, 1..6),
        ) {
            let n = values.len().min(raw_weights.len());
            let values = &values[..n];
            let raw = &raw_weights[..n];
            let sum: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let scores: Vec<Score> = values.iter().map(|v| score(*v)).collect();
            let spec = AggregationSpec::new(weights).unwrap();
            let combined = aggregate(&scores, &spec).unwrap().value();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(combined >= lo && combined <= hi);
        }
    }
}
