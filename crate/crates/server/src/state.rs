//! Immutable engine snapshot plus the deployment document that builds it.
//! Request handlers grab one `Arc<EngineState>` and use it end to end;
//! admin swaps replace the whole snapshot atomically.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use muse_core::backend::BackendRegistry;
use muse_core::routing::{self, RoutingConfig, RoutingRules};
use muse_core::transforms::{QuantileTable, TableRegistry};
use muse_core::types::{PredictorRegistry, PredictorSpec};
use serde::Deserialize;
use thiserror::Error;

use crate::backends::{build_registry, BackendDef, BackendDefError};

/// Everything a request needs, reachable from one atomic pointer.
#[derive(Debug)]
pub struct EngineState {
    pub routing: Arc<RoutingConfig>,
    pub predictors: Arc<PredictorRegistry>,
    pub tables: Arc<TableRegistry>,
    pub backends: Arc<BackendRegistry>,
}

impl EngineState {
    /// New snapshot with a different routing config; everything else is
    /// shared with the current snapshot.
    pub fn with_routing(&self, routing: RoutingConfig) -> Self {
        EngineState {
            routing: Arc::new(routing),
            predictors: Arc::clone(&self.predictors),
            tables: Arc::clone(&self.tables),
            backends: Arc::clone(&self.backends),
        }
    }

    /// New snapshot with one quantile table replaced (or added); returns
    /// the previous version under that reference.
    pub fn with_table(&self, table_ref: &str, table: QuantileTable) -> (Self, Option<String>) {
        let (tables, previous) = self.tables.with_table(table_ref, table);
        (
            EngineState {
                routing: Arc::clone(&self.routing),
                predictors: Arc::clone(&self.predictors),
                tables: Arc::new(tables),
                backends: Arc::clone(&self.backends),
            },
            previous,
        )
    }
}

/// Quantile table source in the deployment file: inline document or a
/// path to a JSON file (relative paths resolve against the deployment
/// file's directory).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TableSource {
    Path(String),
    Inline(QuantileTable),
}

/// The deployment document: backends, predictors, quantile tables, and
/// the routing rules, in one YAML file.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DeploymentDoc {
    #[serde(default)]
    pub config_version: Option<String>,
    pub backends: Vec<BackendDef>,
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub quantile_tables: BTreeMap<String, TableSource>,
    pub routing: RoutingRules,
}

#[derive(Debug, Error)]
pub enum DeploymentError {
    #[error("deployment parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Backend(#[from] BackendDefError),
    #[error(transparent)]
    Spec(#[from] muse_core::types::SpecError),
    #[error("expert {model_id:?} references unknown backend {backend_ref:?}")]
    UnknownBackend { model_id: String, backend_ref: String },
    #[error("predictor {predictor_id:?} references unknown quantile table {table_ref:?}")]
    UnknownTable {
        predictor_id: String,
        table_ref: String,
    },
    #[error("quantile table {table_ref:?}: {message}")]
    Table { table_ref: String, message: String },
    #[error(transparent)]
    Routing(#[from] muse_core::routing::RoutingError),
}

/// A built deployment: the initial engine snapshot plus non-fatal
/// loader warnings.
#[derive(Debug)]
pub struct Deployment {
    pub state: EngineState,
    pub warnings: Vec<String>,
}

/// Parse and validate a full deployment document.
pub fn load_deployment(document: &str, base_dir: &Path) -> Result<Deployment, DeploymentError> {
    let doc: DeploymentDoc =
        serde_yaml::from_str(document).map_err(|err| DeploymentError::Parse(err.to_string()))?;

    let backends = build_registry(&doc.backends)?;

    let predictors = PredictorRegistry::new(doc.predictors)?;
    for (_, spec) in predictors.iter() {
        for expert in &spec.experts {
            if !backends.contains(&expert.backend_ref) {
                return Err(DeploymentError::UnknownBackend {
                    model_id: expert.model_id.clone(),
                    backend_ref: expert.backend_ref.clone(),
                });
            }
        }
    }

    let mut tables = TableRegistry::new();
    for (table_ref, source) in &doc.quantile_tables {
        let table = match source {
            TableSource::Inline(table) => table.clone(),
            TableSource::Path(path) => {
                let resolved = if Path::new(path).is_absolute() {
                    Path::new(path).to_path_buf()
                } else {
                    base_dir.join(path)
                };
                let content =
                    std::fs::read_to_string(&resolved).map_err(|err| DeploymentError::Table {
                        table_ref: table_ref.clone(),
                        message: format!("{}: {err}", resolved.display()),
                    })?;
                QuantileTable::from_json(&content).map_err(|err| DeploymentError::Table {
                    table_ref: table_ref.clone(),
                    message: err.to_string(),
                })?
            }
        };
        tables.insert(table_ref.clone(), table);
    }
    for (_, spec) in predictors.iter() {
        if tables.get(&spec.quantile_table_ref).is_none() {
            return Err(DeploymentError::UnknownTable {
                predictor_id: spec.predictor_id.clone(),
                table_ref: spec.quantile_table_ref.clone(),
            });
        }
    }

    let config_version = doc
        .config_version
        .unwrap_or_else(|| routing::content_hash_version(document));
    let routing_config = RoutingConfig::from_parts(doc.routing, config_version);
    routing_config.validate_targets(&predictors)?;

    let mut warnings = Vec::new();
    if !routing_config.has_catch_all() {
        warnings.push(
            "routing has no catch-all rule; unmatched intents will be rejected".to_string(),
        );
    }

    Ok(Deployment {
        state: EngineState {
            routing: Arc::new(routing_config),
            predictors: Arc::new(predictors),
            tables: Arc::new(tables),
            backends: Arc::new(backends),
        },
        warnings,
    })
}
