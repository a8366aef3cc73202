//! Serving layer: mock expert backends, the stateless scoring service
//! with shadow fan-out and atomic config reloads, and its HTTP surface.

pub mod backends;
pub mod http;
pub mod service;
pub mod sink;
pub mod state;

pub use service::Service;
pub use sink::{read_records, ShadowRecord};
pub use state::{load_deployment, Deployment, DeploymentError, EngineState};
