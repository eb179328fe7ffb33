//! Variable-step Adams–Bashforth constraint construction.
//!
//! For timestamps `t_1 < … < t_K` and an order-`p` explicit Adams scheme, each
//! labelled window relates a state increment to past field evaluations:
//!
//! ```text
//! x_{k+1} - x_k = Σ_{j=0}^{p-1} β_{k,j} f(x_{k-j})
//! ```
//!
//! Stacking the windows gives `A X = B f(X)` with `A, B ∈ ℝ^{(K-M)×K}`, `M = p`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseRows;
use crate::phs_models::BenchmarkSystem;
use crate::simulate;

/// Consecutive step ratios above this value trigger a warning.
pub const STEP_RATIO_WARNING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeFamily {
    AdamsBashforth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultistepScheme {
    family: SchemeFamily,
    order: usize,
}

impl MultistepScheme {
    pub fn adams_bashforth(order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidParameter {
                name: "order".into(),
                reason: format!("Adams-Bashforth order must be 1, 2 or 3, got {order}"),
            });
        }
        Ok(Self {
            family: SchemeFamily::AdamsBashforth,
            order,
        })
    }

    pub fn family(&self) -> SchemeFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of leading points that cannot end a window (`M = p` for AB-p).
    pub fn window_width(&self) -> usize {
        self.order
    }
}

/// Stacked constraint matrices `A`, `B` over a timestamp grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub timestamps: Vec<f64>,
}

impl ConstraintMatrices {
    pub fn windows(&self) -> usize {
        self.a.nrows()
    }

    pub(crate) fn a_rows(&self) -> SparseRows {
        SparseRows::from_dense(&self.a)
    }

    pub(crate) fn b_rows(&self) -> SparseRows {
        SparseRows::from_dense(&self.b)
    }
}

/// Quadrature weights `β_j = ∫_{t_k}^{t_{k+1}} L_j(t) dt` for the Lagrange basis
/// through `t_k, t_{k-1}, …, t_{k-p+1}`.
///
/// `step_history[0]` is the integration step `h_k = t_{k+1} - t_k`, and
/// `step_history[j]` is the gap `t_{k-j+1} - t_{k-j}` for `j ≥ 1`.
pub fn ab_coefficients(step_history: &[f64], order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Err(Error::InvalidParameter {
            name: "order".into(),
            reason: "order must be at least 1".into(),
        });
    }
    if step_history.len() < order {
        return Err(Error::InsufficientData {
            context: "Adams-Bashforth step history",
            needed: order,
            got: step_history.len(),
        });
    }
    let steps = &step_history[..order];
    if let Some((index, &step)) = steps.iter().enumerate().find(|(_, h)| !(**h > 0.0)) {
        return Err(Error::NonPositiveStep { index, step });
    }

    // Nodes relative to t_k: s_0 = 0, s_j = -(h_{k-1} + … + h_{k-j}).
    let mut nodes = vec![0.0; order];
    for j in 1..order {
        nodes[j] = nodes[j - 1] - steps[j];
    }
    let h = steps[0];

    let weights = (0..order)
        .map(|j| {
            // Coefficients of L_j(s) in increasing powers of s.
            let mut poly = vec![1.0];
            for (m, &sm) in nodes.iter().enumerate() {
                if m == j {
                    continue;
                }
                let denom = nodes[j] - sm;
                let mut next = vec![0.0; poly.len() + 1];
                for (d, c) in poly.iter().enumerate() {
                    next[d + 1] += c / denom;
                    next[d] -= c * sm / denom;
                }
                poly = next;
            }
            poly.iter()
                .enumerate()
                .map(|(d, c)| c * h.powi(d as i32 + 1) / (d as f64 + 1.0))
                .sum()
        })
        .collect();
    Ok(weights)
}

/// Builds `A` and `B` for the given grid. Row `w` is the window that ends at
/// index `k + 1` for `k = M-1, …, K-2` (zero-based).
pub fn build_constraints(timestamps: &[f64], scheme: &MultistepScheme) -> Result<ConstraintMatrices> {
    let k_total = timestamps.len();
    let m = scheme.window_width();
    if k_total < m + 1 {
        return Err(Error::InsufficientData {
            context: "multistep constraints",
            needed: m + 1,
            got: k_total,
        });
    }
    if let Some(index) = (1..k_total).find(|&i| !(timestamps[i] > timestamps[i - 1])) {
        return Err(Error::NonIncreasingTimestamps { index });
    }

    let steps: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let ratio_violations = steps
        .windows(2)
        .filter(|s| s[1] / s[0] > STEP_RATIO_WARNING || s[0] / s[1] > STEP_RATIO_WARNING)
        .count();
    if ratio_violations > 0 {
        log::warn!(
            "{ratio_violations} consecutive step ratios exceed {STEP_RATIO_WARNING}; \
             multistep accuracy assumptions may not hold"
        );
    }

    let windows = k_total - m;
    let p = scheme.order();
    let mut a = DMatrix::zeros(windows, k_total);
    let mut b = DMatrix::zeros(windows, k_total);
    for w in 0..windows {
        let k = w + m - 1;
        a[(w, k)] = -1.0;
        a[(w, k + 1)] = 1.0;
        let history: Vec<f64> = (0..p).map(|j| steps[k - j]).collect();
        let beta = ab_coefficients(&history, p)?;
        for (j, bj) in beta.into_iter().enumerate() {
            b[(w, k - j)] = bj;
        }
    }
    Ok(ConstraintMatrices {
        a,
        b,
        timestamps: timestamps.to_vec(),
    })
}

/// `mtx ⊗ I_n`, matching per-timestep stacking of state vectors.
pub fn kron_lift(mtx: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    mtx.kronecker(&DMatrix::<f64>::identity(n, n))
}

/// Outcome of [`lte_order_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct LteReport {
    pub mean_steps: Vec<f64>,
    pub max_residuals: Vec<f64>,
    pub slope: f64,
}

const LTE_HORIZON: f64 = 2.0;
const LTE_SUBSTEPS: usize = 16;

/// Measures the log-log slope of the worst window residual `‖A X − B ẋ(X)‖∞`
/// on exact trajectories over a ladder of step sizes.
pub fn lte_order_check(
    system: &BenchmarkSystem,
    scheme: &MultistepScheme,
    mean_steps: &[f64],
) -> Result<LteReport> {
    if mean_steps.len() < 4 {
        return Err(Error::InsufficientData {
            context: "LTE step ladder",
            needed: 4,
            got: mean_steps.len(),
        });
    }
    let mut residuals = Vec::with_capacity(mean_steps.len());
    for &h in mean_steps {
        if !(h > 0.0) {
            return Err(Error::NonPositiveStep { index: 0, step: h });
        }
        let samples = (LTE_HORIZON / h).round() as usize;
        let dt = h / LTE_SUBSTEPS as f64;
        let dense = simulate::rk4_integrate(
            |x: &[f64], u: &[f64], _t: f64| system.true_field(x, u),
            &system.initial_state,
            0.0,
            dt,
            samples * LTE_SUBSTEPS,
            &system.input,
        )?;
        let idx: Vec<usize> = (0..=samples).map(|i| i * LTE_SUBSTEPS).collect();
        let times: Vec<f64> = idx.iter().map(|&i| dense.times[i]).collect();
        let states: Vec<&Vec<f64>> = idx.iter().map(|&i| &dense.states[i]).collect();
        let rates: Vec<&Vec<f64>> = idx.iter().map(|&i| &dense.derivatives[i]).collect();
        let cm = build_constraints(&times, scheme)?;
        residuals.push(max_window_residual(&cm, &states, &rates));
    }
    let slope = log_log_slope(mean_steps, &residuals);
    Ok(LteReport {
        mean_steps: mean_steps.to_vec(),
        max_residuals: residuals,
        slope,
    })
}

/// `max_w ‖(A X − B Ẋ)_w‖∞` for per-sample states and rates.
pub fn max_window_residual<S: AsRef<[f64]>, R: AsRef<[f64]>>(
    cm: &ConstraintMatrices,
    states: &[S],
    rates: &[R],
) -> f64 {
    let n = states.first().map_or(0, |s| s.as_ref().len());
    let mut worst: f64 = 0.0;
    for w in 0..cm.windows() {
        for i in 0..n {
            let mut r = 0.0;
            for k in 0..states.len() {
                let (a, b) = (cm.a[(w, k)], cm.b[(w, k)]);
                if a != 0.0 {
                    r += a * states[k].as_ref()[i];
                }
                if b != 0.0 {
                    r -= b * rates[k].as_ref()[i];
                }
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
