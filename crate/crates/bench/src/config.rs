//! Experiment configuration, read from TOML.

use std::path::Path;

use msphs::inference::FitConfig;
use msphs::linalg::DEFAULT_JITTER;
use msphs::optim::AdamConfig;
use msphs::phs_models::DEFAULT_OMEGA;
use msphs::simulate::{SamplingConfig, DEFAULT_DT};
use msphs::SystemId;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::method::MethodId;

/// Evaluation mesh. Without explicit `bounds` the mesh covers the bounding box
/// of the noiseless trajectory widened by `inflation` on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    pub bounds: Option<Vec<[f64; 2]>>,
    pub resolution: usize,
    pub inflation: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            bounds: None,
            resolution: 25,
            inflation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Spread of the seeded perturbation of the initial kernel log-parameters.
    pub init_spread: f64,
    pub jitter: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            learning_rate: fit.adam.learning_rate,
            iterations: fit.adam.iterations,
            init_spread: fit.init_spread,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl OptimizerSpec {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                iterations: self.iterations,
                ..AdamConfig::default()
            },
            seed,
            init_spread: self.init_spread,
            jitter: self.jitter,
        }
    }
}

/// One sweep: the cross product of systems, methods, noise variances,
/// jitter levels and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub systems: Vec<SystemId>,
    pub methods: Vec<MethodId>,
    pub samples: usize,
    pub t_span: [f64; 2],
    /// Observation noise variances `σ_x²`.
    pub noise_variances: Vec<f64>,
    /// Timestamp jitter standard deviations `σ_j`.
    pub jitter_stds: Vec<f64>,
    pub seeds: Vec<u64>,
    pub omega: f64,
    pub dt: f64,
    /// Value of the Hamiltonian anchor at the origin; defaults to the true value.
    pub anchor_value: Option<f64>,
    pub mesh: MeshSpec,
    pub optimizer: OptimizerSpec,
    /// Write per-run field and surface dumps next to the run records.
    pub dump_meshes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            systems: SystemId::ALL.to_vec(),
            methods: vec![MethodId::MsPhs { order: 3 }, MethodId::MsOde { order: 3 }, MethodId::GpPhsLoess],
            samples: 100,
            t_span: [0.0, 20.0],
            noise_variances: vec![1e-4, 1e-3, 0.01, 0.02, 0.05],
            jitter_stds: vec![0.0, 0.01, 0.02, 0.05, 0.10],
            seeds: (0..30).collect(),
            omega: DEFAULT_OMEGA,
            dt: DEFAULT_DT,
            anchor_value: None,
            mesh: MeshSpec::default(),
            optimizer: OptimizerSpec::default(),
            dump_meshes: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let non_empty = [
            ("systems", self.systems.is_empty()),
            ("methods", self.methods.is_empty()),
            ("noise_variances", self.noise_variances.is_empty()),
            ("jitter_stds", self.jitter_stds.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = non_empty.iter().find(|(_, empty)| *empty) {
            return Err(BenchError::Config(format!("`{name}` must not be empty")));
        }
        if self.mesh.resolution < 5 {
            return Err(BenchError::Config(format!(
                "mesh resolution must be at least 5 per axis, got {}",
                self.mesh.resolution
            )));
        }
        if !(self.mesh.inflation >= 0.0) {
            return Err(BenchError::Config("mesh inflation must be non-negative".into()));
        }
        if let Some(bounds) = &self.mesh.bounds {
            if bounds.iter().any(|[l, u]| !l.is_finite() || !u.is_finite() || l > u) {
                return Err(BenchError::Config("mesh bounds must be finite with lower <= upper".into()));
            }
        }
        if self.noise_variances.iter().chain(&self.jitter_stds).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(BenchError::Config("noise and jitter levels must be finite and non-negative".into()));
        }
        if !(self.t_span[1] > self.t_span[0]) || !(self.dt > 0.0) || self.samples < 2 {
            return Err(BenchError::Config("need t_span[1] > t_span[0], dt > 0 and at least 2 samples".into()));
        }
        if self.optimizer.iterations == 0 || !(self.optimizer.learning_rate > 0.0) {
            return Err(BenchError::Config("optimizer needs iterations > 0 and learning_rate > 0".into()));
        }
        Ok(())
    }

    pub fn sampling(&self, noise_variance: f64, sigma_j: f64) -> SamplingConfig {
        SamplingConfig {
            t0: self.t_span[0],
            t1: self.t_span[1],
            samples: self.samples,
            sigma_x: noise_variance.sqrt(),
            sigma_j,
            dt: self.dt,
        }
    }
}
