//! Core library for a multi-tenant score-serving toolkit: domain types,
//! the composable score transformations (posterior correction, weighted
//! aggregation, quantile mapping), offline quantile-table fitting, the
//! cold-start Beta-mixture prior, declarative intent routing, and the
//! evaluation metrics used to monitor distribution alignment and
//! calibration.

pub mod backend;
pub mod coldstart;
pub mod metrics;
pub mod quantile;
pub mod routing;
pub mod search;
pub mod transforms;
pub mod types;

pub use backend::{BackendError, BackendRegistry, ExpertModel};
pub use transforms::{
    aggregate, posterior_correct, predict, quantile_map, ExecContext, PredictError, QuantileTable,
    TableRegistry,
};
pub use types::{validate_event, Event, PredictorSpec, RawEvent, Score, ScoreResponse};
