//! Multistep GP with an independent scalar prior on every field component.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::inference::{multistep_design, FieldPrediction, FieldPredictor, FitConfig, FitReport};
use crate::kernels::{se_unchecked, ArdKernelParams, ScalarKernel};
use crate::linalg::{cholesky_with_jitter, SparseRows, MAX_JITTER};
use crate::multistep::MultistepScheme;
use crate::optim;
use crate::phs_models::PhsStructure;
use crate::simulate::TrajectoryDataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact GP for one field component observed through `B`, with noise `σ² A Aᵀ`.
#[derive(Debug, Clone)]
pub struct ScalarGp<K: ScalarKernel> {
    kernel: K,
    noise_variance: f64,
    states: Vec<Vec<f64>>,
    b: SparseRows,
    noise_gram: DMatrix<f64>,
    targets: DVector<f64>,
    lower: Option<DMatrix<f64>>,
    alpha: DVector<f64>,
    weights: DVector<f64>,
    log_det: f64,
}

impl<K: ScalarKernel> ScalarGp<K> {
    pub fn assemble(
        kernel: K,
        noise_variance: f64,
        states: Vec<Vec<f64>>,
        b: SparseRows,
        noise_gram: DMatrix<f64>,
        targets: DVector<f64>,
        jitter: f64,
    ) -> Result<Self> {
        if targets.len() != b.nrows() {
            return Err(Error::DimensionMismatch {
                context: "scalar GP targets",
                expected: b.nrows(),
                actual: targets.len(),
            });
        }
        let mut gp = Self {
            kernel,
            noise_variance,
            states,
            b,
            noise_gram,
            targets,
            lower: None,
            alpha: DVector::zeros(0),
            weights: DVector::zeros(0),
            log_det: 0.0,
        };
        if gp.b.nrows() > 0 {
            let c = gp.b.congruence_lifted(&gp.gram(), 1) + &gp.noise_gram * noise_variance;
            let c = (&c + c.transpose()) * 0.5;
            let chol = cholesky_with_jitter(&c, jitter, MAX_JITTER.max(jitter))?;
            gp.alpha = chol.solve(&gp.targets);
            gp.weights = gp.b.apply_transpose_lifted(&gp.alpha, 1);
            gp.log_det = chol.log_determinant();
            gp.lower = Some(chol.factor.l());
        }
        Ok(gp)
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.states.len();
        let mut g = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = self.kernel.eval(&self.states[a], &self.states[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    pub fn nll(&self) -> f64 {
        if self.lower.is_none() {
            return 0.0;
        }
        0.5 * self.targets.dot(&self.alpha) + 0.5 * self.log_det + 0.5 * self.targets.len() as f64 * LN_2PI
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.states.len(), self.states.iter().map(|s| self.kernel.eval(s, x)))
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.lower.is_none() {
            return 0.0;
        }
        self.cross(x).dot(&self.weights)
    }

    /// Posterior mean and variance of the component at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.kernel.eval(x, x);
        let Some(l) = &self.lower else {
            return (0.0, prior);
        };
        let c = self.cross(x);
        let mean = c.dot(&self.weights);
        let ky = self.b.apply_lifted(&c, 1);
        let v = l.solve_lower_triangular(&ky).expect("positive diagonal");
        (mean, (prior - v.norm_squared()).max(0.0))
    }
}

impl ScalarGp<ArdKernelParams> {
    /// NLL gradient over `[log ℓ_1..n, log σ_f², log σ²]`.
    pub fn nll_gradient(&self) -> Vec<f64> {
        let n = self.kernel.dim();
        let mut grad = vec![0.0; n + 2];
        let Some(l) = &self.lower else {
            return grad;
        };
        let size = l.nrows();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(size, size))
            .expect("positive diagonal");
        let q = l_inv.transpose() * l_inv - &self.alpha * self.alpha.transpose();
        grad[n + 1] = 0.5 * self.noise_variance * q.component_mul(&self.noise_gram).sum();
        let p = self.b.transpose_congruence_lifted(&q, 1);
        let inv = self.kernel.inverse_squared_lengthscales();
        let sf2 = self.kernel.signal_variance();
        let k = self.states.len();
        for a in 0..k {
            for b in 0..k {
                let (xa, xb) = (&self.states[a], &self.states[b]);
                let kv = sf2 * se_unchecked(xa, xb, &inv) * p[(a, b)];
                grad[n] += kv;
                for m in 0..n {
                    grad[m] += kv * (xa[m] - xb[m]).powi(2) * inv[m];
                }
            }
        }
        for g in grad.iter_mut().take(n + 1) {
            *g *= 0.5;
        }
        grad
    }
}

/// Independent per-component multistep GPs.
#[derive(Debug, Clone)]
pub struct MsOdeModel<K: ScalarKernel = ArdKernelParams> {
    components: Vec<ScalarGp<K>>,
    scheme: MultistepScheme,
}

fn component_design(
    dataset: &TrajectoryDataset,
    structure: PhsStructure,
    scheme: &MultistepScheme,
) -> Result<(Vec<Vec<f64>>, SparseRows, DMatrix<f64>, Vec<DVector<f64>>)> {
    let design = multistep_design(dataset, structure, scheme)?;
    let n = structure.state_dim();
    let w = design.windows();
    let targets = (0..n)
        .map(|i| DVector::from_iterator(w, (0..w).map(|r| design.targets[r * n + i])))
        .collect();
    Ok((design.states, design.b, design.noise_gram, targets))
}

impl<K: ScalarKernel + Clone> MsOdeModel<K> {
    /// Conditions every component on the multistep labels with fixed kernels.
    ///
    /// `structure` only supplies the known input map `G` that is subtracted
    /// from the labels.
    pub fn condition(
        dataset: &TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        kernels: Vec<K>,
        noise_variances: &[f64],
        jitter: f64,
    ) -> Result<Self> {
        let n = structure.state_dim();
        if kernels.len() != n || noise_variances.len() != n {
            return Err(Error::DimensionMismatch {
                context: "MS-ODE component kernels",
                expected: n,
                actual: kernels.len().min(noise_variances.len()),
            });
        }
        let (states, b, gram, targets) = component_design(dataset, structure, &scheme)?;
        let components = kernels
            .into_iter()
            .zip(targets)
            .zip(noise_variances)
            .map(|((kern, y), &s2)| ScalarGp::assemble(kern, s2, states.clone(), b.clone(), gram.clone(), y, jitter))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, scheme })
    }

    pub fn components(&self) -> &[ScalarGp<K>] {
        &self.components
    }

    pub fn scheme(&self) -> MultistepScheme {
        self.scheme
    }

    pub fn nll(&self) -> f64 {
        self.components.iter().map(ScalarGp::nll).sum()
    }
}

impl MsOdeModel<ArdKernelParams> {
    /// Fits every component by its own marginal likelihood.
    ///
    /// Initialization mirrors the structured model: state spreads as
    /// lengthscales, the second moment of the component's finite-difference
    /// velocity as signal variance and 1% of the state variance as noise.
    pub fn fit(
        dataset: &TrajectoryDataset,
        structure: PhsStructure,
        scheme: MultistepScheme,
        config: &FitConfig,
    ) -> Result<(Self, FitReport)> {
        let n = structure.state_dim();
        let (states, b, gram, targets) = component_design(dataset, structure, &scheme)?;
        let vel = crate::inference::finite_difference_velocities(dataset);
        let k = states.len().max(1) as f64;
        let mean = |i: usize| states.iter().map(|s| s[i]).sum::<f64>() / k;
        let var: Vec<f64> = (0..n)
            .map(|i| {
                let m = mean(i);
                states.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / k
            })
            .collect();
        let mean_var = var.iter().sum::<f64>() / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_spread.max(0.0)).expect("finite spread");

        let mut components = Vec::with_capacity(n);
        let mut report = FitReport {
            initial_nll: 0.0,
            final_nll: 0.0,
            iterations: 0,
        };
        for (i, y) in targets.into_iter().enumerate() {
            let sf2 = (vel.iter().map(|v| v[i] * v[i]).sum::<f64>() / vel.len().max(1) as f64).max(1e-6);
            let mut z: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-3).ln()).collect();
            z.push(sf2.ln());
            for v in z.iter_mut() {
                if config.init_spread > 0.0 {
                    *v += normal.sample(&mut rng);
                }
            }
            z.push((1e-2 * mean_var).max(1e-10).ln());
            let assemble = |z: &[f64]| -> Result<ScalarGp<ArdKernelParams>> {
                let kern = ArdKernelParams::from_log(z[..n].to_vec(), z[n])?;
                ScalarGp::assemble(kern, z[n + 1].exp(), states.clone(), b.clone(), gram.clone(), y.clone(), config.jitter)
            };
            let outcome = optim::minimize(&z, &config.adam, |z| {
                let gp = assemble(z)?;
                let value = gp.nll();
                if !value.is_finite() {
                    return Err(Error::NonFiniteObjective {
                        parameter: "negative log marginal likelihood".into(),
                    });
                }
                Ok((value, gp.nll_gradient()))
            })?;
            report.initial_nll += outcome.initial_value;
            report.final_nll += outcome.best_value;
            report.iterations = report.iterations.max(outcome.iterations_run);
            components.push(assemble(&outcome.best_params)?);
        }
        Ok((Self { components, scheme }, report))
    }
}

impl<K: ScalarKernel> FieldPredictor for MsOdeModel<K> {
    fn state_dim(&self) -> usize {
        self.components.len()
    }

    fn predict_field(&self, x: &[f64]) -> Result<FieldPrediction> {
        if x.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction state",
                expected: self.components.len(),
                actual: x.len(),
            });
        }
        let n = self.components.len();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        for (i, c) in self.components.iter().enumerate() {
            let (m, v) = c.predict(x);
            mean[i] = m;
            cov[(i, i)] = v;
        }
        Ok(FieldPrediction { mean, covariance: cov })
    }

    fn field_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.components.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction state",
                expected: self.components.len(),
                actual: x.len(),
            });
        }
        Ok(self.components.iter().map(|c| c.mean(x)).collect())
    }
}
