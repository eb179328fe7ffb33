//! Exact inference for the port-Hamiltonian GP with multistep (or identity)
//! observation operators.
//!
//! Every model here is an instance of one linear-Gaussian design:
//!
//! ```text
//! y = (B ⊗ I_n) vec f(X) + ε,   ε ~ N(0, σ² (A Aᵀ ⊗ I_n))
//! ```
//!
//! The multistep model uses the Adams–Bashforth `A`, `B` and targets
//! `y = A_I X̃ − B_I vec(G(X̃)U)`; GP-PHS uses `A = B = I` and prefiltered
//! derivative labels. [`PhsGp`] factorizes the training covariance once and
//! serves field and Hamiltonian posteriors from it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{hessian_into, hessian_log_lengthscale_into, se_unchecked, ArdKernelParams};
use crate::linalg::{cholesky_with_jitter, SparseRows, DEFAULT_JITTER, MAX_JITTER};
use crate::multistep::{build_constraints, kron_lift, MultistepScheme};
use crate::optim::{self, AdamConfig};
use crate::phs_models::PhsStructure;
use crate::simulate::TrajectoryDataset;

/// Anchor jitter `ε_H`, relative to `σ_f²`.
pub const ANCHOR_JITTER: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel hyperparameters, observation noise and structure parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kernel: ArdKernelParams,
    pub log_noise_variance: f64,
    pub theta: Vec<f64>,
}

impl Hyperparameters {
    pub fn new(kernel: ArdKernelParams, noise_variance: f64, theta: Vec<f64>) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise_variance".into(),
                reason: format!("must be positive and finite, got {noise_variance}"),
            });
        }
        Ok(Self {
            kernel,
            log_noise_variance: noise_variance.ln(),
            theta,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// `[log ℓ_1..n, log σ_f², log σ², θ…]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.kernel.log_lengthscales().to_vec();
        v.push(self.kernel.log_signal_variance());
        v.push(self.log_noise_variance);
        v.extend_from_slice(&self.theta);
        v
    }

    pub fn from_vector(v: &[f64], state_dim: usize) -> Result<Self> {
        if v.len() < state_dim + 2 {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter vector",
                expected: state_dim + 2,
                actual: v.len(),
            });
        }
        Ok(Self {
            kernel: ArdKernelParams::from_log(v[..state_dim].to_vec(), v[state_dim])?,
            log_noise_variance: v[state_dim + 1],
            theta: v[state_dim + 2..].to_vec(),
        })
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let n = self.kernel.dim();
        let mut names: Vec<String> = (1..=n).map(|i| format!("log_lengthscale_{i}")).collect();
        names.push("log_signal_variance".into());
        names.push("log_noise_variance".into());
        names.extend((1..=self.theta.len()).map(|i| format!("theta_{i}")));
        names
    }
}

/// Evaluation points, observation operator and targets of one regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDesign {
    pub states: Vec<Vec<f64>>,
    pub b: SparseRows,
    /// `A Aᵀ`, one entry per pair of labelled windows.
    pub noise_gram: DMatrix<f64>,
    /// Stacked labels, index `w * n + i`.
    pub targets: DVector<f64>,
}

impl GpDesign {
    pub fn new(
        states: Vec<Vec<f64>>,
        b: SparseRows,
        noise_gram: DMatrix<f64>,
        targets: DVector<f64>,
    ) -> Result<Self> {
        let n = states.first().map_or(0, Vec::len);
        let w = b.nrows();
        let checks = [
            (b.ncols(), states.len(), "observation operator columns"),
            (noise_gram.nrows(), w, "noise Gram rows"),
            (noise_gram.ncols(), w, "noise Gram columns"),
            (targets.len(), w * n, "target vector"),
        ];
        for (actual, expected, context) in checks {
            if actual != expected {
                return Err(Error::DimensionMismatch { context, expected, actual });
            }
        }
        if let Some(bad) = states.iter().find(|s| s.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "design state",
                expected: n,
                actual: bad.len(),
            });
        }
        Ok(Self { states, b, noise_gram, targets })
    }

    /// Direct noisy observations of `f` at `states`.
    pub fn direct(states: Vec<Vec<f64>>, labels: &[Vec<f64>]) -> Result<Self> {
        let k = states.len();
        let targets = DVector::from_iterator(labels.iter().map(Vec::len).sum(), labels.iter().flatten().copied());
        Self::new(states, SparseRows::identity(k), DMatrix::identity(k, k), targets)
    }

    pub fn windows(&self) -> usize {
        self.b.nrows()
    }

    pub fn labels(&self) -> usize {
        self.targets.len()
    }
}

/// Posterior mean and covariance of the field at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub trait FieldPredictor {
    fn state_dim(&self) -> usize;

    fn predict_field(&self, x: &[f64]) -> Result<FieldPrediction>;

    fn field_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_field(x)?.mean.iter().copied().collect())
    }
}

pub trait HamiltonianPredictor {
    /// Posterior mean and variance of `H(x)`.
    fn predict_hamiltonian(&self, x: &[f64]) -> Result<(f64, f64)>;
}

/// Noiseless constraint `H(state) = value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub state: Vec<f64>,
    pub value: f64,
}

impl Anchor {
    pub fn origin(n: usize, value: f64) -> Self {
        Self {
            state: vec![0.0; n],
            value,
        }
    }
}

#[derive(Debug, Clone)]
struct Factorized {
    lower: DMatrix<f64>,
    log_det: f64,
    alpha: DVector<f64>,
    /// `B_Iᵀ α`, the per-point weights of the posterior mean.
    weights: DVector<f64>,
    jitter: f64,
}

/// `out = a · h · bᵀ` for row-major `n × n` buffers.
#[inline]
fn sandwich(a: &[f64], h: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let aik = a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for l in 0..n {
                    acc += aik * h[k * n + l] * b[j * n + l];
                }
            }
            out[i * n + j] = acc;
        }
    }
}

/// Factorized port-Hamiltonian GP over a [`GpDesign`].
#[derive(Debug, Clone)]
pub struct PhsGp {
    structure: PhsStructure,
    hyper: Hyperparameters,
    design: GpDesign,
    jrs: Vec<Vec<f64>>,
    fact: Option<Factorized>,
    jitter: f64,
}

impl PhsGp {
    /// Assembles and factorizes `B_I K_phs B_Iᵀ + σ² (A Aᵀ ⊗ I)`.
    ///
    /// `jitter` is the initial diagonal jitter relative to `trace / size`.
    pub fn assemble(structure: PhsStructure, hyper: Hyperparameters, design: GpDesign, jitter: f64) -> Result<Self> {
        let n = structure.state_dim();
        if hyper.kernel.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "kernel lengthscales",
                expected: n,
                actual: hyper.kernel.dim(),
            });
        }
        if hyper.theta.len() != structure.theta_len() {
            return Err(Error::DimensionMismatch {
                context: "structure parameters theta",
                expected: structure.theta_len(),
                actual: hyper.theta.len(),
            });
        }
        if let Some(s) = design.states.iter().find(|s| s.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "design state",
                expected: n,
                actual: s.len(),
            });
        }
        let jrs = design
            .states
            .iter()
            .map(|x| {
                let mut buf = vec![0.0; n * n];
                structure.jr_into(&hyper.theta, x, &mut buf);
                buf
            })
            .collect();
        let mut gp = Self {
            structure,
            hyper,
            design,
            jrs,
            fact: None,
            jitter,
        };
        if gp.design.windows() > 0 {
            let (ky, noise) = gp.training_covariance();
            let mut c = ky + noise;
            c = (&c + c.transpose()) * 0.5;
            let chol = cholesky_with_jitter(&c, jitter, MAX_JITTER.max(jitter))?;
            let alpha = chol.solve(&gp.design.targets);
            let weights = gp.design.b.apply_transpose_lifted(&alpha, n);
            gp.fact = Some(Factorized {
                log_det: chol.log_determinant(),
                lower: chol.factor.l(),
                alpha,
                weights,
                jitter: chol.jitter,
            });
        }
        Ok(gp)
    }

    pub fn structure(&self) -> PhsStructure {
        self.structure
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn design(&self) -> &GpDesign {
        &self.design
    }

    pub fn state_dim(&self) -> usize {
        self.structure.state_dim()
    }

    /// Absolute diagonal jitter that the training factorization needed.
    pub fn applied_jitter(&self) -> f64 {
        self.fact.as_ref().map_or(0.0, |f| f.jitter)
    }

    pub fn relative_jitter(&self) -> f64 {
        self.jitter
    }

    fn jr_at(&self, x: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut buf = vec![0.0; n * n];
        self.structure.jr_into(&self.hyper.theta, x, &mut buf);
        buf
    }

    /// Block Gram `K_phs` over the design states (`Kn × Kn`).
    pub fn phs_gram(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let k = self.design.states.len();
        let inv = self.hyper.kernel.inverse_squared_lengthscales();
        let sf2 = self.hyper.kernel.signal_variance();
        let mut gram = DMatrix::zeros(k * n, k * n);
        let mut h = vec![0.0; n * n];
        let mut blk = vec![0.0; n * n];
        for a in 0..k {
            for b in a..k {
                hessian_into(&self.design.states[a], &self.design.states[b], &inv, &mut h);
                sandwich(&self.jrs[a], &h, &self.jrs[b], n, &mut blk);
                for i in 0..n {
                    for j in 0..n {
                        let v = sf2 * blk[i * n + j];
                        gram[(a * n + i, b * n + j)] = v;
                        gram[(b * n + j, a * n + i)] = v;
                    }
                }
            }
        }
        gram
    }

    /// `(K_Y, σ² A_I A_Iᵀ)` before jitter.
    pub fn training_covariance(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let ky = self.design.b.congruence_lifted(&self.phs_gram(), n);
        let noise = kron_lift(&self.design.noise_gram, n) * self.hyper.noise_variance();
        (ky, noise)
    }

    /// Negative log marginal likelihood of the targets.
    pub fn nll(&self) -> f64 {
        match &self.fact {
            None => 0.0,
            Some(f) => {
                let n = self.design.labels() as f64;
                0.5 * self.design.targets.dot(&f.alpha) + 0.5 * f.log_det + 0.5 * n * LN_2PI
            }
        }
    }

    /// NLL and its gradient in the [`Hyperparameters::to_vector`] ordering.
    pub fn nll_with_gradient(&self) -> (f64, Vec<f64>) {
        let n = self.state_dim();
        let t = self.hyper.theta.len();
        let mut grad = vec![0.0; n + 2 + t];
        let Some(f) = &self.fact else {
            return (0.0, grad);
        };
        // Q = C⁻¹ − ααᵀ; dNLL = ½ tr(Q dC).
        let c_inv = {
            let l_inv = f
                .lower
                .solve_lower_triangular(&DMatrix::identity(f.lower.nrows(), f.lower.nrows()))
                .expect("Cholesky factor has a positive diagonal");
            l_inv.transpose() * l_inv
        };
        let q = c_inv - &f.alpha * f.alpha.transpose();
        let noise_lift = kron_lift(&self.design.noise_gram, n);
        grad[n + 1] = 0.5 * self.hyper.noise_variance() * q.component_mul(&noise_lift).sum();

        let p = self.design.b.transpose_congruence_lifted(&q, n);
        let k = self.design.states.len();
        let inv = self.hyper.kernel.inverse_squared_lengthscales();
        let sf2 = self.hyper.kernel.signal_variance();
        let djrs: Vec<Vec<Vec<f64>>> = (0..t)
            .map(|ti| {
                self.design
                    .states
                    .iter()
                    .map(|x| {
                        let mut buf = vec![0.0; n * n];
                        self.structure.djr_into(ti, x, &mut buf);
                        buf
                    })
                    .collect()
            })
            .collect();
        let mut h = vec![0.0; n * n];
        let mut dh = vec![0.0; n * n];
        let mut blk = vec![0.0; n * n];
        let mut blk2 = vec![0.0; n * n];
        let contract = |a: usize, b: usize, m: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += p[(a * n + i, b * n + j)] * m[i * n + j];
                }
            }
            acc
        };
        for a in 0..k {
            for b in 0..k {
                let (xa, xb) = (&self.design.states[a], &self.design.states[b]);
                hessian_into(xa, xb, &inv, &mut h);
                sandwich(&self.jrs[a], &h, &self.jrs[b], n, &mut blk);
                grad[n] += sf2 * contract(a, b, &blk);
                for m in 0..n {
                    hessian_log_lengthscale_into(xa, xb, &inv, m, &mut dh);
                    sandwich(&self.jrs[a], &dh, &self.jrs[b], n, &mut blk);
                    grad[m] += sf2 * contract(a, b, &blk);
                }
                for (ti, dj) in djrs.iter().enumerate() {
                    sandwich(&dj[a], &h, &self.jrs[b], n, &mut blk);
                    sandwich(&self.jrs[a], &h, &dj[b], n, &mut blk2);
                    for (x, y) in blk.iter_mut().zip(&blk2) {
                        *x += y;
                    }
                    grad[n + 2 + ti] += sf2 * contract(a, b, &blk);
                }
            }
        }
        for g in grad.iter_mut().take(n + 1) {
            *g *= 0.5;
        }
        for g in grad.iter_mut().skip(n + 2) {
            *g *= 0.5;
        }
        (self.nll(), grad)
    }

    /// Prior covariance of `f(x)` with itself.
    pub fn prior_field_covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        let jr = self.jr_at(x);
        let inv = self.hyper.kernel.inverse_squared_lengthscales();
        let mut h = vec![0.0; n * n];
        let mut blk = vec![0.0; n * n];
        hessian_into(x, x, &inv, &mut h);
        sandwich(&jr, &h, &jr, n, &mut blk);
        DMatrix::from_row_slice(n, n, &blk) * self.hyper.kernel.signal_variance()
    }

    /// `Cov[f(x_k), f(x)]` stacked over design points (`Kn × n`).
    fn cross_field(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        let k = self.design.states.len();
        let jr = self.jr_at(x);
        let inv = self.hyper.kernel.inverse_squared_lengthscales();
        let sf2 = self.hyper.kernel.signal_variance();
        let mut out = DMatrix::zeros(k * n, n);
        let mut h = vec![0.0; n * n];
        let mut blk = vec![0.0; n * n];
        for (a, xa) in self.design.states.iter().enumerate() {
            hessian_into(xa, x, &inv, &mut h);
            sandwich(&self.jrs[a], &h, &jr, n, &mut blk);
            for i in 0..n {
                for j in 0..n {
                    out[(a * n + i, j)] = sf2 * blk[i * n + j];
                }
            }
        }
        out
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "prediction state",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Anchored posterior over the Hamiltonian surface.
    ///
    /// `epsilon_rel` sets `ε_H = epsilon_rel · σ_f²`.
    pub fn hamiltonian_posterior(&self, anchor: &Anchor, epsilon_rel: f64) -> Result<HamiltonianPosterior> {
        self.check_state(&anchor.state)?;
        let sf2 = self.hyper.kernel.signal_variance();
        let epsilon = epsilon_rel * sf2;
        let (anchor_row, whitened_targets) = match &self.fact {
            Some(f) => {
                let u = self.cross_hamiltonian(&anchor.state);
                let l = f.lower.solve_lower_triangular(&u).expect("positive diagonal");
                let wy = f
                    .lower
                    .solve_lower_triangular(&self.design.targets)
                    .expect("positive diagonal");
                (l, wy)
            }
            None => (DVector::zeros(0), DVector::zeros(0)),
        };
        let k00 = sf2 * se_unchecked(&anchor.state, &anchor.state, &self.hyper.kernel.inverse_squared_lengthscales());
        let schur = k00 + epsilon - anchor_row.norm_squared();
        if !(schur > 0.0) || !schur.is_finite() {
            return Err(Error::FactorizationFailed {
                size: 1 + self.design.labels(),
                max_jitter: epsilon,
                condition_estimate: f64::INFINITY,
            });
        }
        let schur_sqrt = schur.sqrt();
        let anchor_whitened = (anchor.value - anchor_row.dot(&whitened_targets)) / schur_sqrt;
        Ok(HamiltonianPosterior {
            gp: self.clone(),
            anchor: anchor.clone(),
            epsilon,
            anchor_row,
            whitened_targets,
            schur_sqrt,
            anchor_whitened,
        })
    }

    /// `K_Hf(x, X) = B_I c(x)` with `c_k = σ_f² JR(x_k) ∇_{x_k} k_base(x, x_k)`.
    fn cross_hamiltonian(&self, x: &[f64]) -> DVector<f64> {
        let n = self.state_dim();
        let inv = self.hyper.kernel.inverse_squared_lengthscales();
        let sf2 = self.hyper.kernel.signal_variance();
        let mut c = DVector::zeros(self.design.states.len() * n);
        for (a, xa) in self.design.states.iter().enumerate() {
            let kv = sf2 * se_unchecked(x, xa, &inv);
            let jr = &self.jrs[a];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += jr[i * n + j] * (x[j] - xa[j]) * inv[j];
                }
                c[a * n + i] = kv * acc;
            }
        }
        self.design.b.apply_lifted(&c, n)
    }

    /// Maximum relative deviation between `JR ∇μ_H` (central differences) and
    /// `μ_f` over the interior of `grid`.
    pub fn field_from_surface_check(&self, surface: &HamiltonianPosterior, grid: &Grid) -> Result<f64> {
        if grid.resolution < 3 {
            return Err(Error::InsufficientData {
                context: "surface check grid resolution",
                needed: 3,
                got: grid.resolution,
            });
        }
        if grid.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "surface check grid",
                expected: self.state_dim(),
                actual: grid.dim(),
            });
        }
        if self.fact.is_none() {
            return Ok(0.0);
        }
        let n = self.state_dim();
        let steps: Vec<f64> = self.hyper.kernel.lengthscales().iter().map(|l| 1e-4 * l).collect();
        let mut worst_diff: f64 = 0.0;
        let mut worst_norm: f64 = 0.0;
        for (idx, x) in grid.points().into_iter().enumerate() {
            if !grid.is_interior(idx) {
                continue;
            }
            let mut grad = vec![0.0; n];
            for d in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += steps[d];
                xm[d] -= steps[d];
                grad[d] = (surface.mean(&xp)? - surface.mean(&xm)?) / (2.0 * steps[d]);
            }
            let jr = self.jr_at(&x);
            let mu = self.field_mean(&x)?;
            let mut diff: f64 = 0.0;
            let mut norm: f64 = 0.0;
            for i in 0..n {
                let implied: f64 = (0..n).map(|j| jr[i * n + j] * grad[j]).sum();
                diff += (implied - mu[i]).powi(2);
                norm += mu[i] * mu[i];
            }
            worst_diff = worst_diff.max(diff.sqrt());
            worst_norm = worst_norm.max(norm.sqrt());
        }
        Ok(if worst_norm > 0.0 { worst_diff / worst_norm } else { 0.0 })
    }
}

impl FieldPredictor for PhsGp {
    fn state_dim(&self) -> usize {
        PhsGp::state_dim(self)
    }

    fn predict_field(&self, x: &[f64]) -> Result<FieldPrediction> {
        self.check_state(x)?;
        let n = self.state_dim();
        let prior = self.prior_field_covariance(x);
        let Some(f) = &self.fact else {
            return Ok(FieldPrediction {
                mean: DVector::zeros(n),
                covariance: prior,
            });
        };
        let cross = self.cross_field(x);
        let mean = cross.transpose() * &f.weights;
        let mut ky = DMatrix::zeros(self.design.labels(), n);
        for j in 0..n {
            let col = self.design.b.apply_lifted(&cross.column(j).into_owned(), n);
            ky.set_column(j, &col);
        }
        let v = f.lower.solve_lower_triangular(&ky).expect("positive diagonal");
        let cov = prior - v.transpose() * v;
        Ok(FieldPrediction {
            mean,
            covariance: (&cov + cov.transpose()) * 0.5,
        })
    }

    fn field_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let Some(f) = &self.fact else {
            return Ok(vec![0.0; self.state_dim()]);
        };
        Ok((self.cross_field(x).transpose() * &f.weights).iter().copied().collect())
    }
}

/// Posterior over `H` given the labelled windows and one noiseless anchor.
///
/// Conditioning uses the block Cholesky factor of `K_gg` with the training
/// block first, so the field factorization is reused.
#[derive(Debug, Clone)]
pub struct HamiltonianPosterior {
    gp: PhsGp,
    anchor: Anchor,
    epsilon: f64,
    /// `L⁻¹ K_fH(X, x0)`.
    anchor_row: DVector<f64>,
    /// `L⁻¹ y`.
    whitened_targets: DVector<f64>,
    schur_sqrt: f64,
    anchor_whitened: f64,
}

impl HamiltonianPosterior {
    pub fn anchor(&self) -> &Anchor {
        &self.anchor
    }

    /// Absolute anchor jitter `ε_H`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn whitened_cross(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let inv = self.gp.hyper.kernel.inverse_squared_lengthscales();
        let sf2 = self.gp.hyper.kernel.signal_variance();
        let a = sf2 * se_unchecked(x, &self.anchor.state, &inv);
        let wu = match &self.gp.fact {
            Some(f) => f
                .lower
                .solve_lower_triangular(&self.gp.cross_hamiltonian(x))
                .expect("positive diagonal"),
            None => DVector::zeros(0),
        };
        let last = (a - self.anchor_row.dot(&wu)) / self.schur_sqrt;
        (wu, last)
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.gp.check_state(x)?;
        let (wu, last) = self.whitened_cross(x);
        Ok(wu.dot(&self.whitened_targets) + last * self.anchor_whitened)
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.gp.check_state(x)?;
        let (wu, last) = self.whitened_cross(x);
        let mean = wu.dot(&self.whitened_targets) + last * self.anchor_whitened;
        let inv = self.gp.hyper.kernel.inverse_squared_lengthscales();
        let prior = self.gp.hyper.kernel.signal_variance() * se_unchecked(x, x, &inv);
        let var = (prior - wu.norm_squared() - last * last).max(0.0);
        Ok((mean, var))
    }
}

impl HamiltonianPredictor for HamiltonianPosterior {
    fn predict_hamiltonian(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.predict(x)
    }
}

/// Optimizer settings for marginal-likelihood fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub adam: AdamConfig,
    /// Seeds the perturbation of the initial kernel log-hyperparameters.
    pub seed: u64,
    /// Standard deviation of that perturbation (0 disables it).
    pub init_spread: f64,
    pub jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            seed: 0,
            init_spread: 0.1,
            jitter: DEFAULT_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub iterations: usize,
}

/// Starting point of the optimizer for the given design, seed and spread.
pub fn perturbed_start(init: &Hyperparameters, config: &FitConfig) -> Vec<f64> {
    let mut z = init.to_vector();
    if config.init_spread > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_spread).expect("finite spread");
        let kernel_len = init.kernel.dim() + 1;
        for v in z.iter_mut().take(kernel_len) {
            *v += normal.sample(&mut rng);
        }
    }
    z
}

/// Minimizes the NLL of `design` over all hyperparameters jointly with Adam.
pub fn fit_design(
    structure: PhsStructure,
    design: &GpDesign,
    init: &Hyperparameters,
    config: &FitConfig,
) -> Result<(PhsGp, FitReport)> {
    let z0 = perturbed_start(init, config);
    if let Some(i) = z0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective {
            parameter: init.parameter_names()[i].clone(),
        });
    }
    let n = structure.state_dim();
    let outcome = optim::minimize(&z0, &config.adam, |z| {
        let hyper = Hyperparameters::from_vector(z, n)?;
        let gp = PhsGp::assemble(structure, hyper, design.clone(), config.jitter)?;
        let (value, grad) = gp.nll_with_gradient();
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective {
                parameter: "negative log marginal likelihood".into(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective {
                parameter: gp.hyper.parameter_names()[i].clone(),
            });
        }
        Ok((value, grad))
    })?;
    let best = Hyperparameters::from_vector(&outcome.best_params, n)?;
    let gp = PhsGp::assemble(structure, best, design.clone(), config.jitter)?;
    Ok((
        gp,
        FitReport {
            initial_nll: outcome.initial_value,
            final_nll: outcome.best_value,
            iterations: outcome.iterations_run,
        },
    ))
}

fn column_stats(rows: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let k = rows.len().max(1) as f64;
    let mean: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / k).collect();
    let var = (0..n)
        .map(|i| rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / k)
        .collect();
    (mean, var)
}

/// Scale-aware starting hyperparameters.
///
/// Lengthscales are the per-dimension spread of `states`; `σ_f²` is the second
/// moment of the energy proxy `½‖v‖²` over the velocity estimates `velocities`;
/// the noise variance is `noise_fraction` times the mean variance of
/// `noise_reference`; every structure parameter starts at 0.1.
pub fn initial_hyperparameters(
    structure: PhsStructure,
    states: &[Vec<f64>],
    velocities: &[Vec<f64>],
    noise_reference: &[Vec<f64>],
    noise_fraction: f64,
) -> Result<Hyperparameters> {
    let n = structure.state_dim();
    let (_, var) = column_stats(states, n);
    let lengthscales: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-3)).collect();
    let proxy: Vec<f64> = velocities
        .iter()
        .map(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>())
        .collect();
    let second_moment = proxy.iter().map(|e| e * e).sum::<f64>() / proxy.len().max(1) as f64;
    let signal = if second_moment.is_finite() { second_moment.max(1e-6) } else { 1.0 };
    let (_, ref_var) = column_stats(noise_reference, n);
    let mean_var = ref_var.iter().sum::<f64>() / n as f64;
    let noise = (noise_fraction * mean_var).max(1e-10);
    Hyperparameters::new(
        ArdKernelParams::new(&lengthscales, signal)?,
        noise,
        vec![0.1; structure.theta_len()],
    )
}

/// The multistep port-Hamiltonian GP on one trajectory.
#[derive(Debug, Clone)]
pub struct MsPhsModel {
    dataset: TrajectoryDataset,
    scheme: MultistepScheme,
    gp: PhsGp,
}

/// Builds the multistep design: rows of `B`, `A Aᵀ` and `A_I X̃ − B_I vec(G U)`.
///
/// Datasets with no complete window give an empty design.
pub fn multistep_design(
    dataset: &TrajectoryDataset,
    structure: PhsStructure,
    scheme: &MultistepScheme,
) -> Result<GpDesign> {
    let n = structure.state_dim();
    if dataset.state_dim() != n {
        return Err(Error::DimensionMismatch {
            context: "dataset state dimension",
            expected: n,
            actual: dataset.state_dim(),
        });
    }
    let states = dataset.state_rows();
    let k = states.len();
    if k <= scheme.window_width() {
        return GpDesign::new(
            states,
            SparseRows::from_dense(&DMatrix::zeros(0, k)),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
        );
    }
    let cm = build_constraints(&dataset.timestamps, scheme)?;
    let (a, b) = (cm.a_rows(), cm.b_rows());
    let x_vec = DVector::from_iterator(k * n, states.iter().flatten().copied());
    let gu = DVector::from_iterator(
        k * n,
        (0..k).flat_map(|r| structure.port_apply(&states[r], &dataset.input(r))),
    );
    let targets = a.apply_lifted(&x_vec, n) - b.apply_lifted(&gu, n);
    let noise_gram = a.self_gram();
    GpDesign::new(states, b, noise_gram, targets)
}

/// Forward-difference velocities, repeating the last one.
pub fn finite_difference_velocities(dataset: &TrajectoryDataset) -> Vec<Vec<f64>> {
    let k = dataset.len();
    let n = dataset.state_dim();
    let mut out: Vec<Vec<f64>> = (0..k.saturating_sub(1))
        .map(|r| {
            let h = dataset.timestamps[r + 1] - dataset.timestamps[r];
            (0..n)
                .map(|i| (dataset.states[(r + 1, i)] - dataset.states[(r, i)]) / h)
                .collect()
        })
        .collect();
    if let Some(last) = out.last().cloned() {
        out.push(last);
    }
    out
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub method: String,
    pub structure: PhsStructure,
    pub scheme: Option<MultistepScheme>,
    pub hyperparameters: Hyperparameters,
    pub jitter: f64,
    pub dataset_fingerprint: String,
}

pub const MODEL_FORMAT: &str = "msphs-model v1";

impl MsPhsModel {
    pub fn new(
        dataset: TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        Self::with_jitter(dataset, structure, scheme, hyper, DEFAULT_JITTER)
    }

    pub fn with_jitter(
        dataset: TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        hyper: Hyperparameters,
        jitter: f64,
    ) -> Result<Self> {
        let design = multistep_design(&dataset, structure, &scheme)?;
        let gp = PhsGp::assemble(structure, hyper, design, jitter)?;
        Ok(Self { dataset, scheme, gp })
    }

    /// Default starting point derived from the data.
    pub fn initial_hyperparameters(dataset: &TrajectoryDataset, structure: PhsStructure) -> Result<Hyperparameters> {
        let states = dataset.state_rows();
        let vel = finite_difference_velocities(dataset);
        initial_hyperparameters(structure, &states, &vel, &states, 1e-2)
    }

    /// Fits from the default starting point.
    pub fn fit(
        dataset: TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        config: &FitConfig,
    ) -> Result<(Self, FitReport)> {
        let init = Self::initial_hyperparameters(&dataset, structure)?;
        Self::fit_from(dataset, structure, scheme, &init, config)
    }

    pub fn fit_from(
        dataset: TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        init: &Hyperparameters,
        config: &FitConfig,
    ) -> Result<(Self, FitReport)> {
        let design = multistep_design(&dataset, structure, &scheme)?;
        let (gp, report) = fit_design(structure, &design, init, config)?;
        Ok((Self { dataset, scheme, gp }, report))
    }

    pub fn dataset(&self) -> &TrajectoryDataset {
        &self.dataset
    }

    pub fn scheme(&self) -> MultistepScheme {
        self.scheme
    }

    pub fn structure(&self) -> PhsStructure {
        self.gp.structure
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.gp.hyper
    }

    pub fn engine(&self) -> &PhsGp {
        &self.gp
    }

    pub fn windows(&self) -> usize {
        self.gp.design.windows()
    }

    pub fn training_covariance(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.gp.training_covariance()
    }

    pub fn nll(&self) -> f64 {
        self.gp.nll()
    }

    pub fn nll_with_gradient(&self) -> (f64, Vec<f64>) {
        self.gp.nll_with_gradient()
    }

    pub fn hamiltonian_posterior(&self, anchor: &Anchor) -> Result<HamiltonianPosterior> {
        self.gp.hamiltonian_posterior(anchor, ANCHOR_JITTER)
    }

    pub fn field_from_surface_check(&self, anchor: &Anchor, grid: &Grid) -> Result<f64> {
        let surface = self.hamiltonian_posterior(anchor)?;
        self.gp.field_from_surface_check(&surface, grid)
    }

    pub fn document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            method: format!("ms-phs-ab-{}", self.scheme.order()),
            structure: self.gp.structure,
            scheme: Some(self.scheme),
            hyperparameters: self.gp.hyper.clone(),
            jitter: self.gp.jitter,
            dataset_fingerprint: self.dataset.fingerprint(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document()).expect("model document serializes")
    }

    /// Rebuilds a model from [`MsPhsModel::to_json`] output and the dataset it was fitted on.
    pub fn from_json(text: &str, dataset: TrajectoryDataset) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unsupported model format `{}`", doc.format),
            });
        }
        let fingerprint = dataset.fingerprint();
        if doc.dataset_fingerprint != fingerprint {
            return Err(Error::InvalidParameter {
                name: "dataset".into(),
                reason: format!(
                    "fingerprint {fingerprint} does not match model fingerprint {}",
                    doc.dataset_fingerprint
                ),
            });
        }
        let scheme = doc.scheme.ok_or_else(|| Error::Parse {
            line: 1,
            reason: "multistep model without a scheme".into(),
        })?;
        Self::with_jitter(dataset, doc.structure, scheme, doc.hyperparameters, doc.jitter)
    }
}

impl FieldPredictor for MsPhsModel {
    fn state_dim(&self) -> usize {
        self.gp.state_dim()
    }

    fn predict_field(&self, x: &[f64]) -> Result<FieldPrediction> {
        self.gp.predict_field(x)
    }

    fn field_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.gp.field_mean(x)
    }
}
