//! Comparison methods.
//!
//! - [`ms_ode`]: the multistep GP with independent squared-exponential priors
//!   per field component and no port-Hamiltonian structure.
//! - [`gp_phs`]: the port-Hamiltonian kernel regressed on prefiltered
//!   derivative estimates.
//! - [`loess`] and [`savgol`]: the derivative prefilters.

pub mod gp_phs;
pub mod loess;
pub mod ms_ode;
pub mod savgol;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use gp_phs::GpPhsModel;
pub use loess::loess_smooth;
pub use ms_ode::MsOdeModel;
pub use savgol::savgol_smooth;

/// Which prefilter produced a [`DerivativeEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoother {
    Loess { span: f64, degree: usize },
    SavitzkyGolay { window: usize, degree: usize },
}

impl Smoother {
    pub const DEFAULT_LOESS: Smoother = Smoother::Loess { span: 0.15, degree: 2 };
    pub const DEFAULT_SAVGOL: Smoother = Smoother::SavitzkyGolay { window: 11, degree: 3 };

    pub fn apply(&self, dataset: &crate::simulate::TrajectoryDataset) -> crate::Result<DerivativeEstimate> {
        match *self {
            Smoother::Loess { span, degree } => loess::loess_smooth(dataset, span, degree),
            Smoother::SavitzkyGolay { window, degree } => savgol::savgol_smooth(dataset, window, degree),
        }
    }
}

/// Smoothed states and derivative estimates at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub states: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
    pub smoother: Smoother,
}

impl DerivativeEstimate {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn state_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.states.row(k).iter().copied().collect()).collect()
    }

    pub fn derivative_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|k| self.derivatives.row(k).iter().copied().collect())
            .collect()
    }
}

/// Weighted least-squares polynomial fit in the local coordinate `s`;
/// returns the coefficients in increasing powers, or `None` if rank deficient.
pub(crate) fn local_polyfit(s: &[f64], w: &[f64], y: &[f64], degree: usize) -> Option<Vec<f64>> {
    let rows = s.len();
    let cols = degree + 1;
    let mut x = DMatrix::zeros(rows, cols);
    let mut rhs = DMatrix::zeros(rows, 1);
    for r in 0..rows {
        let sw = w[r].sqrt();
        let mut p = 1.0;
        for c in 0..cols {
            x[(r, c)] = sw * p;
            p *= s[r];
        }
        rhs[(r, 0)] = sw * y[r];
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= 1e-12 * smax {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    Some(sol.column(0).iter().copied().collect())
}
