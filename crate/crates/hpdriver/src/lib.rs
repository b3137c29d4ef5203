//! Adaptive hp driver on the simulated fabric: analytic indicator, hp
//! marking, degree smoothing, weighted repartitioning, enumeration and
//! per-cycle metrics.

pub mod config;
pub mod driver;
pub mod indicator;
pub mod metrics;
pub mod smoothing;

use thiserror::Error;

pub use config::{parse_degree_range, Config, Fixture};
pub use driver::{enumerate_mesh, run, Enumerated, MeshState, RunOutput};
pub use metrics::{to_csv, CycleMetrics, CSV_HEADER};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] hpdof::MeshError),
    #[error(transparent)]
    Element(#[from] hpdof::ElementError),
    #[error(transparent)]
    Enumeration(#[from] hpdof::EnumerationError),
    #[error(transparent)]
    Constraint(#[from] hpdof::ConstraintError),
    #[error(transparent)]
    Transfer(#[from] hpdof::TransferError),
    #[error(transparent)]
    Fabric(#[from] hpdof::fabric::FabricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("restart: {0}")]
    Restart(String),
}
