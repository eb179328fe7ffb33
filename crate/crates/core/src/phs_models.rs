//! Parametric port-Hamiltonian structures and the three benchmark oscillators.
//!
//! A structure fixes the *form* of `J(x)`, `R(x)` and `G(x)`; its unknown
//! parameter vector `theta` enters the dissipation only. The Hamiltonian is not
//! part of the structure: it is what the GP learns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemId {
    MassSpring,
    VanDerPol,
    Duffing,
}

impl SystemId {
    pub const ALL: [SystemId; 3] = [SystemId::MassSpring, SystemId::VanDerPol, SystemId::Duffing];

    pub fn as_str(&self) -> &'static str {
        match self {
            SystemId::MassSpring => "mass-spring",
            SystemId::VanDerPol => "van-der-pol",
            SystemId::Duffing => "duffing",
        }
    }
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "system".into(),
                reason: format!("unknown system `{s}`"),
            })
    }
}

/// Known structural form of `J`, `R`, `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhsStructure {
    /// `J` canonical symplectic, `R = diag(0, θ)`, `G = (0, 1)ᵀ`.
    LinearDamping,
    /// `J` canonical symplectic, `R = diag(0, -θ(1 - q²))`, `G = (0, 1)ᵀ`.
    VanDerPolDamping,
    /// One-dimensional `J = 0`, `R = θ`, `G = 1`.
    Scalar,
}

impl PhsStructure {
    pub fn state_dim(&self) -> usize {
        match self {
            PhsStructure::Scalar => 1,
            _ => 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn theta_len(&self) -> usize {
        1
    }

    fn check(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.theta_len() {
            return Err(Error::DimensionMismatch {
                context: "structure parameters theta",
                expected: self.theta_len(),
                actual: theta.len(),
            });
        }
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "structure state",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn interconnection(&self, _x: &[f64]) -> DMatrix<f64> {
        match self {
            PhsStructure::Scalar => DMatrix::zeros(1, 1),
            _ => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        }
    }

    /// The single nonzero entry of `R` (bottom-right for 2-D structures).
    fn damping(&self, theta: &[f64], x: &[f64]) -> f64 {
        match self {
            PhsStructure::LinearDamping | PhsStructure::Scalar => theta[0],
            PhsStructure::VanDerPolDamping => -theta[0] * (1.0 - x[0] * x[0]),
        }
    }

    fn damping_partial(&self, x: &[f64]) -> f64 {
        match self {
            PhsStructure::LinearDamping | PhsStructure::Scalar => 1.0,
            PhsStructure::VanDerPolDamping => -(1.0 - x[0] * x[0]),
        }
    }

    pub fn dissipation(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, x)?;
        let n = self.state_dim();
        let mut r = DMatrix::zeros(n, n);
        r[(n - 1, n - 1)] = self.damping(theta, x);
        Ok(r)
    }

    pub fn port(&self, _x: &[f64]) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut g = DMatrix::zeros(n, 1);
        g[(n - 1, 0)] = 1.0;
        g
    }

    /// `G(x) u` as a plain vector.
    pub fn port_apply(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut out = vec![0.0; n];
        out[n - 1] = u.first().copied().unwrap_or(0.0);
        out
    }

    /// `J(x) - R(x)`.
    pub fn jr_eval(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta, x)?;
        let n = self.state_dim();
        let mut buf = vec![0.0; n * n];
        self.jr_into(theta, x, &mut buf);
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    /// Row-major `J(x) - R(x)`; dimensions are assumed checked.
    pub(crate) fn jr_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            PhsStructure::Scalar => out[0] = -self.damping(theta, x),
            _ => {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = -1.0;
                out[3] = -self.damping(theta, x);
            }
        }
    }

    /// Row-major `∂(J - R)/∂θ_index`.
    pub(crate) fn djr_into(&self, _index: usize, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let last = out.len() - 1;
        out[last] = -self.damping_partial(x);
    }

    pub fn field(&self, theta: &[f64], grad_h: &[f64], x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let jr = self.jr_eval(theta, x)?;
        let n = self.state_dim();
        let g = self.port_apply(x, u);
        Ok((0..n)
            .map(|i| (0..n).map(|j| jr[(i, j)] * grad_h[j]).sum::<f64>() + g[i])
            .collect())
    }
}

/// Free-function form of [`PhsStructure::jr_eval`].
pub fn jr_eval(structure: &PhsStructure, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
    structure.jr_eval(theta, x)
}

/// External input `u(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    Zero,
    Cosine { omega: f64, amplitude: f64 },
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match *self {
            InputSignal::Zero => vec![0.0],
            InputSignal::Cosine { omega, amplitude } => vec![amplitude * (omega * t).cos()],
        }
    }

    pub fn dim(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Physics {
    MassSpring { stiffness: f64, mass: f64, damping: f64 },
    VanDerPol { mu: f64 },
    Duffing { alpha: f64, beta: f64, gamma: f64 },
}

/// A benchmark with its true parameters, Hamiltonian, input and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSystem {
    pub id: SystemId,
    pub structure: PhsStructure,
    pub theta: Vec<f64>,
    pub input: InputSignal,
    pub initial_state: Vec<f64>,
    physics: Physics,
}

pub const DEFAULT_OMEGA: f64 = 1.0;

/// Undamped unit mass-spring, `q̈ = -(k/m) q - (d/m) q̇ + u`, state `(q, p = m q̇)`.
pub fn mass_spring(omega: f64) -> BenchmarkSystem {
    let damping = 0.0;
    BenchmarkSystem {
        id: SystemId::MassSpring,
        structure: PhsStructure::LinearDamping,
        theta: vec![damping],
        input: InputSignal::Cosine { omega, amplitude: 1.0 },
        initial_state: vec![1.0, 0.0],
        physics: Physics::MassSpring {
            stiffness: 1.0,
            mass: 1.0,
            damping,
        },
    }
}

/// `q̈ = μ(1 - q²) q̇ - q` with `μ = 1` and zero input.
pub fn van_der_pol() -> BenchmarkSystem {
    let mu = 1.0;
    BenchmarkSystem {
        id: SystemId::VanDerPol,
        structure: PhsStructure::VanDerPolDamping,
        theta: vec![mu],
        input: InputSignal::Zero,
        initial_state: vec![1.0, 0.0],
        physics: Physics::VanDerPol { mu },
    }
}

/// `q̈ = -α q - β q³ - γ q̇ + u` with `α = 1`, `β = 5`, `γ = 0.5`.
pub fn duffing(omega: f64) -> BenchmarkSystem {
    let gamma = 0.5;
    BenchmarkSystem {
        id: SystemId::Duffing,
        structure: PhsStructure::LinearDamping,
        theta: vec![gamma],
        input: InputSignal::Cosine { omega, amplitude: 1.0 },
        initial_state: vec![1.0, 0.0],
        physics: Physics::Duffing {
            alpha: 1.0,
            beta: 5.0,
            gamma,
        },
    }
}

pub fn benchmark(id: SystemId, omega: f64) -> BenchmarkSystem {
    match id {
        SystemId::MassSpring => mass_spring(omega),
        SystemId::VanDerPol => van_der_pol(),
        SystemId::Duffing => duffing(omega),
    }
}

impl BenchmarkSystem {
    pub fn state_dim(&self) -> usize {
        self.structure.state_dim()
    }

    pub fn hamiltonian(&self, x: &[f64]) -> f64 {
        let (q, p) = (x[0], x[1]);
        match self.physics {
            Physics::MassSpring { stiffness, mass, .. } => p * p / (2.0 * mass) + stiffness * q * q / 2.0,
            Physics::VanDerPol { .. } => (q * q + p * p) / 2.0,
            Physics::Duffing { alpha, beta, .. } => {
                p * p / 2.0 + alpha * q * q / 2.0 + beta * q.powi(4) / 4.0
            }
        }
    }

    pub fn hamiltonian_grad(&self, x: &[f64]) -> Vec<f64> {
        let (q, p) = (x[0], x[1]);
        match self.physics {
            Physics::MassSpring { stiffness, mass, .. } => vec![stiffness * q, p / mass],
            Physics::VanDerPol { .. } => vec![q, p],
            Physics::Duffing { alpha, beta, .. } => vec![alpha * q + beta * q.powi(3), p],
        }
    }

    /// `ẋ` from the second-order equation of motion.
    pub fn true_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (q, p) = (x[0], x[1]);
        let u0 = u.first().copied().unwrap_or(0.0);
        match self.physics {
            Physics::MassSpring { stiffness, mass, damping } => {
                let qdot = p / mass;
                vec![qdot, -stiffness * q - damping * qdot + u0]
            }
            Physics::VanDerPol { mu } => vec![p, mu * (1.0 - q * q) * p - q],
            Physics::Duffing { alpha, beta, gamma } => {
                vec![p, -alpha * q - beta * q.powi(3) - gamma * p + u0]
            }
        }
    }

    /// Zero-input drift `[J - R] ∇H`, the quantity the field posterior targets.
    pub fn true_drift(&self, x: &[f64]) -> Vec<f64> {
        self.true_field(x, &[0.0])
    }

    /// `[J - R] ∇H + G u` assembled through the structure.
    pub fn structured_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.structure
            .field(&self.theta, &self.hamiltonian_grad(x), x, u)
            .expect("benchmark dimensions are consistent")
    }
}
