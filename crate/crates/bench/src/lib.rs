//! Experiment harness for the multistep port-Hamiltonian GP: configuration,
//! evaluation meshes, metrics, seeded sweeps and report tables.

pub mod config;
pub mod error;
pub mod mesh;
pub mod method;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod sweep;

pub use config::{ExperimentConfig, MeshSpec, OptimizerSpec};
pub use error::{BenchError, Result};
pub use method::MethodId;
