//! The stateless request-handling core: validate, resolve, execute the
//! live predictor, fan shadow work out to the sink, and expose atomic
//! config/table swaps plus the warm-up gate.

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use chrono::Utc;
use muse_core::routing::{self, RoutingError};
use muse_core::transforms::{predict, ExecContext, PredictError, QuantileTable};
use muse_core::types::{
    validate_event, Event, PredictorSpec, RawEvent, ScoreResponse, ValidationError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sink::{ShadowJob, ShadowSink};
use crate::state::EngineState;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("service is warming up")]
    NotReady,
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Error)]
pub enum AdminError {
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("warm-up exceeded {limit_ms} ms after {completed} calls")]
pub struct WarmupTimeout {
    pub limit_ms: u64,
    pub completed: u64,
}

#[derive(Debug, Default, Serialize)]
pub struct StatsSnapshot {
    pub live_requests: u64,
    pub live_failures: u64,
    pub shadow_enqueued: u64,
    pub shadow_dropped: u64,
    pub shadow_failures: u64,
    pub shadow_written: u64,
    pub warmup_calls: u64,
    pub ready: bool,
}

#[derive(Debug, Serialize)]
pub struct SwapReport {
    pub old_version: String,
    pub new_version: String,
}

#[derive(Debug, Serialize)]
pub struct TableSwapReport {
    pub table_ref: String,
    pub old_version: Option<String>,
    pub new_version: String,
}

#[derive(Debug, Serialize)]
pub struct VersionReport {
    pub config_version: String,
    pub tables: std::collections::BTreeMap<String, String>,
    pub ready: bool,
}

#[derive(Default)]
struct ServiceStats {
    live_requests: AtomicU64,
    live_failures: AtomicU64,
    warmup_calls: AtomicU64,
}

/// Shared, thread-safe handle to the scoring engine. Request handlers
/// hold only this; all mutable state is behind atomic snapshot swaps.
pub struct Service {
    state: ArcSwap<EngineState>,
    ready: AtomicBool,
    sink: ShadowSink,
    stats: ServiceStats,
    /// Serializes admin read-modify-write swaps; the request path never
    /// takes it.
    admin: Mutex<()>,
}

impl Service {
    pub fn new(
        state: EngineState,
        sink_path: impl AsRef<Path>,
        shadow_queue_depth: usize,
    ) -> std::io::Result<Self> {
        Ok(Service {
            state: ArcSwap::from_pointee(state),
            ready: AtomicBool::new(false),
            sink: ShadowSink::open(sink_path, shadow_queue_depth)?,
            stats: ServiceStats::default(),
            admin: Mutex::new(()),
        })
    }

    pub fn snapshot(&self) -> Arc<EngineState> {
        self.state.load_full()
    }

    pub fn is_ready(&self) -> bool {
        self.ready.load(Ordering::Acquire)
    }

    /// Force readiness without a warm-up run (zero-count warm-up).
    pub fn mark_ready(&self) {
        self.ready.store(true, Ordering::Release);
    }

    /// Score one request: validate, resolve intent, execute the live
    /// predictor, and mirror to any shadow predictors asynchronously.
    /// Shadow work can never fail or delay the live response.
    pub fn score(&self, raw: RawEvent) -> Result<ScoreResponse, ServeError> {
        if !self.is_ready() {
            return Err(ServeError::NotReady);
        }
        let mut raw = raw;
        if raw.event_id.as_deref().map_or(true, str::is_empty) {
            raw.event_id = Some(uuid::Uuid::new_v4().to_string());
        }
        let event = validate_event(raw)?;
        let state = self.snapshot();

        let decision = routing::resolve(&event, &state.routing)?;
        let spec = state
            .predictors
            .get(&decision.live_predictor)
            .expect("routing targets validated at load");

        let response = self.execute(&event, spec, &state).map_err(|err| {
            self.stats.live_failures.fetch_add(1, Ordering::Relaxed);
            err
        })?;
        self.stats.live_requests.fetch_add(1, Ordering::Relaxed);

        if !decision.shadow_predictors.is_empty() {
            self.sink.enqueue(ShadowJob {
                config_version: state.routing.config_version.clone(),
                state,
                event,
                shadow_predictors: decision.shadow_predictors,
                timestamp: Utc::now(),
            });
        }

        Ok(response)
    }

    fn execute(
        &self,
        event: &Event,
        spec: &PredictorSpec,
        state: &EngineState,
    ) -> Result<ScoreResponse, PredictError> {
        predict(
            event,
            spec,
            ExecContext {
                backends: &state.backends,
                tables: &state.tables,
            },
        )
    }

    /// Drive seeded synthetic traffic through every registered predictor
    /// before accepting external requests, then flip the readiness probe.
    /// Responses are discarded and the shadow sink is never touched.
    pub fn warmup(
        &self,
        calls_per_predictor: u64,
        seed: u64,
        timeout: Option<Duration>,
    ) -> Result<u64, WarmupTimeout> {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = self.snapshot();
        let mut completed = 0u64;
        for (predictor_id, spec) in state.predictors.iter() {
            let backend_refs: Vec<&str> =
                spec.experts.iter().map(|e| e.backend_ref.as_str()).collect();
            let mut feature_names = state.backends.required_features(&backend_refs);
            if feature_names.is_empty() {
                feature_names.push("warmup_signal".to_string());
            }
            for call in 0..calls_per_predictor {
                if let Some(limit) = timeout {
                    if started.elapsed() > limit {
                        return Err(WarmupTimeout {
                            limit_ms: limit.as_millis() as u64,
                            completed,
                        });
                    }
                }
                let mut features = indexmap::IndexMap::new();
                for name in &feature_names {
                    features.insert(name.clone(), rng.gen::<f64>());
                }
                let event = Event {
                    event_id: format!("warmup-{predictor_id}-{call}"),
                    tenant_id: "warmup".to_string(),
                    geography: String::new(),
                    schema_id: String::new(),
                    features,
                    tags: Default::default(),
                };
                // Warm-up exercises the scoring path; failures here are
                // configuration problems that will also fail live traffic,
                // so they are not fatal to readiness.
                let _ = self.execute(&event, spec, &state);
                completed += 1;
                self.stats.warmup_calls.fetch_add(1, Ordering::Relaxed);
            }
        }
        self.mark_ready();
        Ok(completed)
    }

    /// Atomically replace the routing config from a YAML document. The
    /// document is validated against the registered predictors first; on
    /// any error the active config is untouched.
    pub fn swap_routing(&self, document: &str) -> Result<SwapReport, AdminError> {
        let _guard = self.admin.lock().expect("admin lock");
        let current = self.snapshot();
        let config = routing::load_config(document, &current.predictors)
            .map_err(|err| AdminError::Invalid(err.to_string()))?;
        let new_version = config.config_version.clone();
        let old_version = current.routing.config_version.clone();
        self.state.store(Arc::new(current.with_routing(config)));
        Ok(SwapReport {
            old_version,
            new_version,
        })
    }

    /// Atomically replace (or add) one quantile table from its JSON
    /// document. Invalid documents leave the registry untouched.
    pub fn swap_table(&self, table_ref: &str, document: &str) -> Result<TableSwapReport, AdminError> {
        let _guard = self.admin.lock().expect("admin lock");
        let table = QuantileTable::from_json(document)
            .map_err(|err| AdminError::Invalid(err.to_string()))?;
        let new_version = table.version().to_string();
        let current = self.snapshot();
        let (next, old_version) = current.with_table(table_ref, table);
        self.state.store(Arc::new(next));
        Ok(TableSwapReport {
            table_ref: table_ref.to_string(),
            old_version,
            new_version,
        })
    }

    pub fn versions(&self) -> VersionReport {
        let state = self.snapshot();
        VersionReport {
            config_version: state.routing.config_version.clone(),
            tables: state.tables.versions(),
            ready: self.is_ready(),
        }
    }

    pub fn stats(&self) -> StatsSnapshot {
        let sink = self.sink.stats();
        StatsSnapshot {
            live_requests: self.stats.live_requests.load(Ordering::Relaxed),
            live_failures: self.stats.live_failures.load(Ordering::Relaxed),
            shadow_enqueued: sink.enqueued.load(Ordering::Relaxed),
            shadow_dropped: sink.dropped.load(Ordering::Relaxed),
            shadow_failures: sink.failures.load(Ordering::Relaxed),
            shadow_written: sink.written.load(Ordering::Relaxed),
            warmup_calls: self.stats.warmup_calls.load(Ordering::Relaxed),
            ready: self.is_ready(),
        }
    }

    /// Block until all accepted shadow work is executed and flushed.
    pub fn drain_shadows(&self) {
        self.sink.drain();
    }

    pub fn sink_path(&self) -> &Path {
        self.sink.path()
    }

    pub fn backend_invocations(&self) -> u64 {
        self.snapshot().backends.invocations()
    }
}
