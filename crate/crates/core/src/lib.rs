//! Multistep port-Hamiltonian Gaussian processes.
//!
//! A GP prior on the Hamiltonian `H` induces a matrix-valued prior on the
//! vector field `f(x) = [J(x) - R(x)] ∇H(x)`. Variable-step Adams–Bashforth
//! windows turn irregular, noisy trajectory samples into linear functionals of
//! `f`, so both the field and the Hamiltonian surface can be conditioned on the
//! data in closed form.
//!
//! Module map:
//!
//! - [`kernels`]: ARD squared-exponential base kernel, its derivative blocks and
//!   the PHS kernel.
//! - [`multistep`]: variable-step AB coefficients and stacked constraint matrices.
//! - [`phs_models`]: parametric `J`, `R`, `G` structures and the benchmark systems.
//! - [`simulate`]: RK4 ground truth, jittered sampling and noisy observation.
//! - [`inference`]: the MS-PHS GP (training covariance, posteriors, NLL, fitting).
//! - [`grid`]: regular evaluation grids.
//! - [`baselines`]: MS-ODE and GP-PHS with LOESS / Savitzky–Golay prefiltering.

pub mod baselines;
pub mod error;
pub mod grid;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod multistep;
pub mod optim;
pub mod phs_models;
pub mod simulate;

pub use error::{Error, Result};
pub use grid::Grid;
pub use inference::{
    Anchor, FieldPrediction, FieldPredictor, FitConfig, HamiltonianPosterior, HamiltonianPredictor, Hyperparameters,
    MsPhsModel,
};
pub use kernels::ArdKernelParams;
pub use multistep::{ConstraintMatrices, MultistepScheme};
pub use phs_models::{BenchmarkSystem, InputSignal, PhsStructure, SystemId};
pub use simulate::TrajectoryDataset;
