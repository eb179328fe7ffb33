//! ARD squared-exponential base kernel, its analytic derivative blocks, and the
//! matrix-valued port-Hamiltonian kernel built on top of it.
//!
//! The Hamiltonian prior is `Cov[H(x), H(x')] = σ_f² k_base(x, x')` with
//!
//! ```text
//! k_base(x, x') = exp(-½ Σ_i (x_i - x'_i)² / ℓ_i²)
//! ```
//!
//! The free functions [`base_eval`], [`base_grad_x2`] and
//! [`base_hessian_block`] are unit-variance; `σ_f²` enters through
//! [`phs_kernel_eval`] and through every cross-covariance assembled in
//! [`crate::inference`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lengthscales and signal variance, stored in log-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdKernelParams {
    log_lengthscales: Vec<f64>,
    log_signal_variance: f64,
}

impl ArdKernelParams {
    pub fn new(lengthscales: &[f64], signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidParameter {
                name: "lengthscales".into(),
                reason: "at least one lengthscale is required".into(),
            });
        }
        if let Some(bad) = lengthscales.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lengthscales".into(),
                reason: format!("must be positive and finite, got {bad}"),
            });
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(Error::InvalidParameter {
                name: "signal_variance".into(),
                reason: format!("must be positive and finite, got {signal_variance}"),
            });
        }
        Ok(Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        })
    }

    pub fn from_log(log_lengthscales: Vec<f64>, log_signal_variance: f64) -> Result<Self> {
        if log_lengthscales.is_empty()
            || log_lengthscales.iter().any(|v| !v.is_finite())
            || !log_signal_variance.is_finite()
        {
            return Err(Error::InvalidParameter {
                name: "log hyperparameters".into(),
                reason: "must be finite and non-empty".into(),
            });
        }
        Ok(Self {
            log_lengthscales,
            log_signal_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn log_lengthscales(&self) -> &[f64] {
        &self.log_lengthscales
    }

    pub fn log_signal_variance(&self) -> f64 {
        self.log_signal_variance
    }

    /// Returns a copy with the signal variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_log(
            self.log_lengthscales.clone(),
            self.log_signal_variance + factor.ln(),
        )
    }

    /// `1 / ℓ_i²` for every dimension.
    pub(crate) fn inverse_squared_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales
            .iter()
            .map(|v| (-2.0 * v).exp())
            .collect()
    }
}

/// A scalar covariance function on state space.
pub trait ScalarKernel: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], x2: &[f64]) -> f64;
}

/// `σ_f² k_base`, the plain ARD-SE kernel used for independent per-output priors.
impl ScalarKernel for ArdKernelParams {
    fn dim(&self) -> usize {
        ArdKernelParams::dim(self)
    }

    fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        let inv = self.inverse_squared_lengthscales();
        self.signal_variance() * se_unchecked(x, x2, &inv)
    }
}

fn check_dims(x: &[f64], x2: &[f64], params: &ArdKernelParams) -> Result<()> {
    let n = params.dim();
    for (len, ctx) in [(x.len(), "kernel input x"), (x2.len(), "kernel input x2")] {
        if len != n {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: n,
                actual: len,
            });
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn se_unchecked(x: &[f64], x2: &[f64], inv_sq: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(inv_sq)
        .map(|((a, b), w)| (a - b) * (a - b) * w)
        .sum();
    (-0.5 * r2).exp()
}

/// Writes `∇_x ∇_{x2} k_base(x, x2)` (row-major, `n*n`) into `out` and returns `k_base`.
#[inline]
pub(crate) fn hessian_into(x: &[f64], x2: &[f64], inv_sq: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len();
    let k = se_unchecked(x, x2, inv_sq);
    for i in 0..n {
        let di = (x[i] - x2[i]) * inv_sq[i];
        for j in 0..n {
            let dj = (x[j] - x2[j]) * inv_sq[j];
            let delta = if i == j { inv_sq[i] } else { 0.0 };
            out[i * n + j] = k * (delta - di * dj);
        }
    }
    k
}

/// Derivative of the Hessian block with respect to `log ℓ_m`, row-major.
#[inline]
pub(crate) fn hessian_log_lengthscale_into(
    x: &[f64],
    x2: &[f64],
    inv_sq: &[f64],
    m: usize,
    out: &mut [f64],
) {
    let n = x.len();
    let k = se_unchecked(x, x2, inv_sq);
    let dm = x[m] - x2[m];
    let dk = k * dm * dm * inv_sq[m];
    for i in 0..n {
        let di = x[i] - x2[i];
        for j in 0..n {
            let dj = x[j] - x2[j];
            let aa = inv_sq[i] * inv_sq[j];
            let delta = if i == j { inv_sq[i] } else { 0.0 };
            let base = delta - di * dj * aa;
            let mut dbase = 0.0;
            if i == j && i == m {
                dbase -= 2.0 * inv_sq[i];
            }
            let hits = (i == m) as u8 + (j == m) as u8;
            dbase += 2.0 * di * dj * aa * hits as f64;
            out[i * n + j] = dk * base + k * dbase;
        }
    }
}

/// Unit-variance squared-exponential kernel.
pub fn base_eval(x: &[f64], x2: &[f64], params: &ArdKernelParams) -> Result<f64> {
    check_dims(x, x2, params)?;
    Ok(se_unchecked(x, x2, &params.inverse_squared_lengthscales()))
}

/// `∇_{x2} k_base(x, x2)`; component `i` is `k_base · (x_i - x2_i) / ℓ_i²`.
pub fn base_grad_x2(x: &[f64], x2: &[f64], params: &ArdKernelParams) -> Result<DVector<f64>> {
    check_dims(x, x2, params)?;
    let inv = params.inverse_squared_lengthscales();
    let k = se_unchecked(x, x2, &inv);
    Ok(DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| k * (x[i] - x2[i]) * inv[i]),
    ))
}

/// Mixed second derivative block `∇_x ∇_{x2} k_base(x, x2)`.
pub fn base_hessian_block(x: &[f64], x2: &[f64], params: &ArdKernelParams) -> Result<DMatrix<f64>> {
    check_dims(x, x2, params)?;
    let n = x.len();
    let mut buf = vec![0.0; n * n];
    hessian_into(x, x2, &params.inverse_squared_lengthscales(), &mut buf);
    Ok(DMatrix::from_row_slice(n, n, &buf))
}

/// `σ_f² · JR(x) · ∇_x∇_{x2} k_base(x, x2) · JR(x2)ᵀ`, i.e. `Cov[f(x), f(x2)]`.
pub fn phs_kernel_eval(
    x: &[f64],
    x2: &[f64],
    jr_x: &DMatrix<f64>,
    jr_x2: &DMatrix<f64>,
    params: &ArdKernelParams,
) -> Result<DMatrix<f64>> {
    let n = params.dim();
    for (m, ctx) in [(jr_x, "JR(x)"), (jr_x2, "JR(x2)")] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: n,
                actual: if m.nrows() != n { m.nrows() } else { m.ncols() },
            });
        }
    }
    let hess = base_hessian_block(x, x2, params)?;
    Ok(jr_x * hess * jr_x2.transpose() * params.signal_variance())
}

/// Stacked `nK × nK` Gram matrix of [`phs_kernel_eval`] over a point set.
pub fn phs_gram(
    points: &[Vec<f64>],
    jrs: &[DMatrix<f64>],
    params: &ArdKernelParams,
) -> Result<DMatrix<f64>> {
    if points.len() != jrs.len() {
        return Err(Error::DimensionMismatch {
            context: "phs_gram JR evaluations",
            expected: points.len(),
            actual: jrs.len(),
        });
    }
    let n = params.dim();
    let k = points.len();
    let mut gram = DMatrix::zeros(n * k, n * k);
    for a in 0..k {
        for b in 0..k {
            let block = phs_kernel_eval(&points[a], &points[b], &jrs[a], &jrs[b], params)?;
            gram.view_mut((a * n, b * n), (n, n)).copy_from(&block);
        }
    }
    Ok(gram)
}
