//! Shared domain vocabulary: events, scores, expert and predictor
//! declarations. All types are immutable after construction and validate
//! their invariants up front.

use std::collections::BTreeMap;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A score in the closed interval `[0, 1]`.
///
/// Construction outside the range (or with a non-finite value) is rejected,
/// so every `Score` observed anywhere in the system is a valid probability.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Self, ValidationError> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(ValidationError::ScoreOutOfRange { value });
        }
        Ok(Score(value))
    }

    /// Clamp a value that is mathematically in `[0, 1]` but may have picked
    /// up a few ulps of floating-point noise.
    pub(crate) fn clamped(value: f64) -> Self {
        Score(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = ValidationError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = f64::deserialize(deserializer)?;
        Score::new(value).map_err(serde::de::Error::custom)
    }
}

/// A validated scoring request: routing intent metadata plus a named
/// feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub tenant_id: String,
    /// Region code; empty when the request did not carry one.
    pub geography: String,
    /// Opaque schema matching token; empty when absent.
    pub schema_id: String,
    /// Feature name to value, insertion-ordered.
    pub features: IndexMap<String, f64>,
    /// Opaque extension dimensions, carried through but never matched on.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

/// Wire-format scoring request as received by the HTTP endpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawEvent {
    #[serde(default)]
    pub event_id: Option<String>,
    #[serde(default)]
    pub tenant: String,
    #[serde(default)]
    pub geography: Option<String>,
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub features: IndexMap<String, f64>,
    #[serde(default)]
    pub tags: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("tenant must be a non-empty string")]
    MissingTenant,
    #[error("feature {feature:?} is not finite")]
    NonFiniteFeature { feature: String },
    #[error("feature vector must contain at least one feature")]
    EmptyFeatureVector,
    #[error("score {value} outside [0, 1]")]
    ScoreOutOfRange { value: f64 },
}

/// Validate a wire payload into an [`Event`].
///
/// A missing `event_id` becomes the empty string; callers that need a
/// usable correlation id (the serving layer) fill one in beforehand.
pub fn validate_event(raw: RawEvent) -> Result<Event, ValidationError> {
    if raw.tenant.is_empty() {
        return Err(ValidationError::MissingTenant);
    }
    if raw.features.is_empty() {
        return Err(ValidationError::EmptyFeatureVector);
    }
    for (name, value) in &raw.features {
        if !value.is_finite() {
            return Err(ValidationError::NonFiniteFeature {
                feature: name.clone(),
            });
        }
    }
    Ok(Event {
        event_id: raw.event_id.unwrap_or_default(),
        tenant_id: raw.tenant,
        geography: raw.geography.unwrap_or_default(),
        schema_id: raw.schema.unwrap_or_default(),
        features: raw.features,
        tags: raw.tags.unwrap_or_default(),
    })
}

/// One expert model inside a predictor: which backend serves it and the
/// undersampling ratio of the majority negative class used in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExpertSpec {
    pub model_id: String,
    pub backend_ref: String,
    pub undersampling_ratio: f64,
}

impl ExpertSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !self.undersampling_ratio.is_finite()
            || self.undersampling_ratio <= 0.0
            || self.undersampling_ratio > 1.0
        {
            return Err(SpecError::InvalidUndersamplingRatio {
                model_id: self.model_id.clone(),
                ratio: self.undersampling_ratio,
            });
        }
        Ok(())
    }
}

/// Declarative scoring DAG: the expert set, aggregation weights, the
/// quantile table it maps through, and whether posterior correction runs
/// before aggregation.
///
/// Weights are normalized to sum to 1 at load time so the request path is
/// arithmetic-only. Single-expert predictors skip correction and
/// aggregation entirely.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictorSpec {
    pub predictor_id: String,
    pub experts: Vec<ExpertSpec>,
    pub aggregation_weights: Vec<f64>,
    pub quantile_table_ref: String,
    pub apply_posterior_correction: bool,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PredictorSpecDoc {
    predictor_id: String,
    experts: Vec<ExpertSpec>,
    aggregation_weights: Vec<f64>,
    quantile_table_ref: String,
    #[serde(default = "default_true")]
    apply_posterior_correction: bool,
}

fn default_true() -> bool {
    true
}

impl<'de> Deserialize<'de> for PredictorSpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let doc = PredictorSpecDoc::deserialize(deserializer)?;
        PredictorSpec::new(
            doc.predictor_id,
            doc.experts,
            doc.aggregation_weights,
            doc.quantile_table_ref,
            doc.apply_posterior_correction,
        )
        .map_err(serde::de::Error::custom)
    }
}

impl PredictorSpec {
    pub fn new(
        predictor_id: String,
        experts: Vec<ExpertSpec>,
        aggregation_weights: Vec<f64>,
        quantile_table_ref: String,
        apply_posterior_correction: bool,
    ) -> Result<Self, SpecError> {
        if experts.is_empty() {
            return Err(SpecError::NoExperts {
                predictor_id: predictor_id.clone(),
            });
        }
        if experts.len() != aggregation_weights.len() {
            return Err(SpecError::WeightCountMismatch {
                predictor_id: predictor_id.clone(),
                experts: experts.len(),
                weights: aggregation_weights.len(),
            });
        }
        for expert in &experts {
            expert.validate()?;
        }
        let sum: f64 = aggregation_weights.iter().sum();
        if aggregation_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
            || !sum.is_finite()
            || sum <= 0.0
        {
            return Err(SpecError::InvalidWeights {
                predictor_id: predictor_id.clone(),
            });
        }
        let aggregation_weights = aggregation_weights.iter().map(|w| w / sum).collect();
        Ok(PredictorSpec {
            predictor_id,
            experts,
            aggregation_weights,
            quantile_table_ref,
            apply_posterior_correction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("predictor {predictor_id:?} declares no experts")]
    NoExperts { predictor_id: String },
    #[error("predictor {predictor_id:?} has {experts} experts but {weights} weights")]
    WeightCountMismatch {
        predictor_id: String,
        experts: usize,
        weights: usize,
    },
    #[error("predictor {predictor_id:?} weights must be non-negative with a positive sum")]
    InvalidWeights { predictor_id: String },
    #[error("expert {model_id:?} undersampling ratio {ratio} outside (0, 1]")]
    InvalidUndersamplingRatio { model_id: String, ratio: f64 },
    #[error("duplicate predictor id {predictor_id:?}")]
    DuplicatePredictorId { predictor_id: String },
}

/// The outcome of executing one predictor for one event.
///
/// Shadow responses are persisted to the shadow sink only and never
/// returned to the requesting client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub event_id: String,
    pub predictor_id: String,
    pub score: Score,
    pub latency_micros: u64,
    pub shadow: bool,
}

/// Immutable set of predictors keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PredictorRegistry {
    predictors: BTreeMap<String, Arc<PredictorSpec>>,
}

impl PredictorRegistry {
    pub fn new(specs: Vec<PredictorSpec>) -> Result<Self, SpecError> {
        let mut predictors = BTreeMap::new();
        for spec in specs {
            let id = spec.predictor_id.clone();
            if predictors.insert(id.clone(), Arc::new(spec)).is_some() {
                return Err(SpecError::DuplicatePredictorId { predictor_id: id });
            }
        }
        Ok(PredictorRegistry { predictors })
    }

    pub fn get(&self, predictor_id: &str) -> Option<&Arc<PredictorSpec>> {
        self.predictors.get(predictor_id)
    }

    pub fn contains(&self, predictor_id: &str) -> bool {
        self.predictors.contains_key(predictor_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.predictors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<PredictorSpec>)> {
        self.predictors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }
}
