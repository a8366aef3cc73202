//! Mock expert backends standing in for remote model servers. All three
//! kinds are pure functions of (event, parameters), so replays and shadow
//! traffic can never perturb live scores. Optional latency injection
//! delays the call without touching the output.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use muse_core::backend::{BackendError, BackendRegistry, ExpertModel};
use muse_core::types::{Event, Score};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Declarative backend definition as it appears in the deployment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendDef {
    pub model_id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
    /// Feature-store stand-in: static defaults merged under the request's
    /// features (the request wins).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub default_features: BTreeMap<String, f64>,
    /// Fixed artificial delay per call, for latency experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_micros: Option<u64>,
    /// Additional uniformly random delay in `[0, jitter]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_jitter_micros: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "kebab-case")]
pub enum BackendKind {
    /// Fixed score per event id, with a fallback for unknown ids.
    TableLookup {
        scores: BTreeMap<String, f64>,
        #[serde(default = "default_lookup_score")]
        default: f64,
    },
    /// Sigmoid of a linear function over named features.
    LinearLogistic {
        weights: BTreeMap<String, f64>,
        #[serde(default)]
        bias: f64,
    },
    /// Replayable score script; the event id picks the entry, so the same
    /// event always scores the same regardless of call order.
    ScriptedSequence { sequence: Vec<f64> },
}

fn default_lookup_score() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendDefError {
    #[error("backend {model_id:?}: score {value} outside [0, 1]")]
    ScoreOutOfRange { model_id: String, value: f64 },
    #[error("backend {model_id:?}: weight for {feature:?} is not finite")]
    NonFiniteWeight { model_id: String, feature: String },
    #[error("backend {model_id:?}: scripted sequence is empty")]
    EmptySequence { model_id: String },
    #[error("duplicate backend id {model_id:?}")]
    DuplicateBackend { model_id: String },
}

impl BackendDef {
    pub fn validate(&self) -> Result<(), BackendDefError> {
        match &self.kind {
            BackendKind::TableLookup { scores, default } => {
                for value in scores.values().chain(std::iter::once(default)) {
                    if !value.is_finite() || !(0.0..=1.0).contains(value) {
                        return Err(BackendDefError::ScoreOutOfRange {
                            model_id: self.model_id.clone(),
                            value: *value,
                        });
                    }
                }
            }
            BackendKind::LinearLogistic { weights, bias } => {
                for (feature, weight) in weights {
                    if !weight.is_finite() {
                        return Err(BackendDefError::NonFiniteWeight {
                            model_id: self.model_id.clone(),
                            feature: feature.clone(),
                        });
                    }
                }
                if !bias.is_finite() {
                    return Err(BackendDefError::NonFiniteWeight {
                        model_id: self.model_id.clone(),
                        feature: "bias".to_string(),
                    });
                }
            }
            BackendKind::ScriptedSequence { sequence } => {
                if sequence.is_empty() {
                    return Err(BackendDefError::EmptySequence {
                        model_id: self.model_id.clone(),
                    });
                }
                for value in sequence {
                    if !value.is_finite() || !(0.0..=1.0).contains(value) {
                        return Err(BackendDefError::ScoreOutOfRange {
                            model_id: self.model_id.clone(),
                            value: *value,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runtime form of a [`BackendDef`].
pub struct MockBackend {
    def: BackendDef,
}

impl MockBackend {
    pub fn new(def: BackendDef) -> Result<Self, BackendDefError> {
        def.validate()?;
        Ok(MockBackend { def })
    }

    fn feature(&self, event: &Event, name: &str) -> Result<f64, BackendError> {
        event
            .features
            .get(name)
            .or_else(|| self.def.default_features.get(name))
            .copied()
            .ok_or_else(|| BackendError::MissingFeature {
                feature: name.to_string(),
            })
    }

    fn inject_latency(&self) {
        let mut delay = self.def.latency_micros.unwrap_or(0);
        if let Some(jitter) = self.def.latency_jitter_micros {
            if jitter > 0 {
                delay += rand::thread_rng().gen_range(0..=jitter);
            }
        }
        if delay > 0 {
            std::thread::sleep(Duration::from_micros(delay));
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in bytes {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ExpertModel for MockBackend {
    fn score(&self, event: &Event) -> Result<Score, BackendError> {
        self.inject_latency();
        let value = match &self.def.kind {
            BackendKind::TableLookup { scores, default } => {
                scores.get(&event.event_id).copied().unwrap_or(*default)
            }
            BackendKind::LinearLogistic { weights, bias } => {
                let mut z = *bias;
                for (name, weight) in weights {
                    z += weight * self.feature(event, name)?;
                }
                sigmoid(z)
            }
            BackendKind::ScriptedSequence { sequence } => {
                let index = fnv1a(event.event_id.as_bytes()) as usize % sequence.len();
                sequence[index]
            }
        };
        Score::new(value.clamp(0.0, 1.0)).map_err(|err| BackendError::Other(err.to_string()))
    }

    fn required_features(&self) -> Vec<String> {
        match &self.def.kind {
            BackendKind::LinearLogistic { weights, .. } => weights.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }
}

/// Build a registry from backend definitions, rejecting duplicates.
pub fn build_registry(defs: &[BackendDef]) -> Result<BackendRegistry, BackendDefError> {
    let mut registry = BackendRegistry::new();
    for def in defs {
        if registry.contains(&def.model_id) {
            return Err(BackendDefError::DuplicateBackend {
                model_id: def.model_id.clone(),
            });
        }
        registry.register(def.model_id.clone(), Arc::new(MockBackend::new(def.clone())?));
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn event(id: &str, features: &[(&str, f64)]) -> Event {
        let mut map = IndexMap::new();
        for (name, value) in features {
            map.insert(name.to_string(), *value);
        }
        Event {
            event_id: id.into(),
            tenant_id: "t".into(),
            geography: String::new(),
            schema_id: String::new(),
            features: map,
            tags: Default::default(),
        }
    }

    #[test]
    fn lookup_backend_scores_by_event_id() {
        let backend = MockBackend::new(BackendDef {
            model_id: "m".into(),
            kind: BackendKind::TableLookup {
                scores: [("e1".to_string(), 0.9)].into_iter().collect(),
                default: 0.25,
            },
            default_features: BTreeMap::new(),
            latency_micros: None,
            latency_jitter_micros: None,
        })
        .unwrap();
        assert_eq!(backend.score(&event("e1", &[("x", 0.0)])).unwrap().value(), 0.9);
        assert_eq!(backend.score(&event("e2", &[("x", 0.0)])).unwrap().value(), 0.25);
    }

    #[test]
    fn logistic_backend_uses_defaults_with_request_priority() {
        let backend = MockBackend::new(BackendDef {
            model_id: "m".into(),
            kind: BackendKind::LinearLogistic {
                weights: [("a".to_string(), 1.0), ("b".to_string(), 1.0)]
                    .into_iter()
                    .collect(),
                bias: 0.0,
            },
            default_features: [("b".to_string(), 2.0)].into_iter().collect(),
            latency_micros: None,
            latency_jitter_micros: None,
        })
        .unwrap();

        // b falls back to the default 2.0; request-supplied a = -2.0.
        let score = backend.score(&event("e", &[("a", -2.0)])).unwrap();
        assert!((score.value() - 0.5).abs() < 1e-12);

        // Request overrides the default for b.
        let score = backend.score(&event("e", &[("a", 0.0), ("b", 0.0)])).unwrap();
        assert!((score.value() - 0.5).abs() < 1e-12);

        // Missing feature is a hard error.
        let err = backend.score(&event("e", &[("b", 1.0)])).unwrap_err();
        assert!(matches!(err, BackendError::MissingFeature { feature } if feature == "a"));
    }

    #[test]
    fn scripted_backend_is_stable_per_event() {
        let backend = MockBackend::new(BackendDef {
            model_id: "m".into(),
            kind: BackendKind::ScriptedSequence {
                sequence: vec![0.1, 0.5, 0.9],
            },
            default_features: BTreeMap::new(),
            latency_micros: None,
            latency_jitter_micros: None,
        })
        .unwrap();
        let first = backend.score(&event("alpha", &[("x", 0.0)])).unwrap();
        for _ in 0..5 {
            assert_eq!(backend.score(&event("alpha", &[("x", 0.0)])).unwrap(), first);
        }
        // Different ids cover different entries.
        let values: std::collections::HashSet<u64> = (0..50)
            .map(|i| {
                backend
                    .score(&event(&format!("e{i}"), &[("x", 0.0)]))
                    .unwrap()
                    .value()
                    .to_bits()
            })
            .collect();
        assert!(values.len() > 1);
    }

    #[test]
    fn invalid_defs_rejected() {
        let bad = BackendDef {
            model_id: "m".into(),
            kind: BackendKind::ScriptedSequence { sequence: vec![] },
            default_features: BTreeMap::new(),
            latency_micros: None,
            latency_jitter_micros: None,
        };
        assert!(MockBackend::new(bad).is_err());

        let out_of_range = BackendDef {
            model_id: "m".into(),
            kind: BackendKind::TableLookup {
                scores: BTreeMap::new(),
                default: 1.5,
            },
            default_features: BTreeMap::new(),
            latency_micros: None,
            latency_jitter_micros: None,
        };
        assert!(MockBackend::new(out_of_range).is_err());
    }

    #[test]
    fn yaml_def_round_trip() {
        let yaml = r#"
modelId: gbm-v3
kind: linear-logistic
parameters:
  weights: {amount: 0.5}
  bias: -1.0
defaultFeatures: {amount: 0.0}
"#;
        let def: BackendDef = serde_yaml::from_str(yaml).unwrap();
        assert_eq!(def.model_id, "gbm-v3");
        assert!(matches!(def.kind, BackendKind::LinearLogistic { .. }));
        let registry = build_registry(&[def]).unwrap();
        assert_eq!(registry.required_features(&["gbm-v3"]), vec!["amount"]);
    }
}
