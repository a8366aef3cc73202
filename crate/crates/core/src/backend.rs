//! Expert backend abstraction. The scoring pipeline talks to models
//! through [`ExpertModel`]; concrete implementations (mock servers, real
//! inference clients) are registered by reference in a [`BackendRegistry`].

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::types::{Event, Score};

/// A deterministic scoring function over events.
pub trait ExpertModel: Send + Sync {
    fn score(&self, event: &Event) -> Result<Score, BackendError>;

    /// Feature names the model reads, used to synthesize warm-up events.
    fn required_features(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("feature {feature:?} required by the model is missing")]
    MissingFeature { feature: String },
    #[error("{0}")]
    Other(String),
}

/// Immutable map from backend reference to expert implementation, with a
/// shared invocation counter used by warm-up accounting and tests.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn ExpertModel>>,
    invocations: Arc<AtomicU64>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, backend_ref: impl Into<String>, model: Arc<dyn ExpertModel>) {
        self.backends.insert(backend_ref.into(), model);
    }

    pub fn contains(&self, backend_ref: &str) -> bool {
        self.backends.contains_key(backend_ref)
    }

    pub fn refs(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    /// Score `event` with the backend registered under `backend_ref`.
    pub fn score(&self, backend_ref: &str, event: &Event) -> Result<Score, BackendError> {
        let model = self
            .backends
            .get(backend_ref)
            .ok_or_else(|| BackendError::Other(format!("backend {backend_ref:?} not registered")))?;
        self.invocations.fetch_add(1, Ordering::Relaxed);
        model.score(event)
    }

    /// Total scoring invocations across all backends since construction.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    /// Union of feature names required by the given backends, in first-seen
    /// order.
    pub fn required_features(&self, backend_refs: &[&str]) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut names = Vec::new();
        for backend_ref in backend_refs {
            if let Some(model) = self.backends.get(*backend_ref) {
                for name in model.required_features() {
                    if seen.insert(name.clone()) {
                        names.push(name);
                    }
                }
            }
        }
        names
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("refs", &self.backends.keys().collect::<Vec<_>>())
            .field("invocations", &self.invocations())
            .finish()
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::registry;
    use super::*;
    use indexmap::IndexMap;

    fn event() -> Event {
        let mut features = IndexMap::new();
        features.insert("x".to_string(), 1.0);
        Event {
            event_id: "e".into(),
            tenant_id: "t".into(),
            geography: String::new(),
            schema_id: String::new(),
            features,
            tags: Default::default(),
        }
    }

    #[test]
    fn missing_backend_is_an_error() {
        let registry = registry(&[("a", 0.5)]);
        assert!(registry.score("missing", &event()).is_err());
    }

    #[test]
    fn invocations_are_counted() {
        let registry = registry(&[("a", 0.5)]);
        for _ in 0..3 {
            registry.score("a", &event()).unwrap();
        }
        assert_eq!(registry.invocations(), 3);
    }
}
