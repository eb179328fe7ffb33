//! First-order optimization with bias-corrected Adam moments.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            iterations: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub initial_value: f64,
    pub iterations_run: usize,
}

/// Minimizes `objective` (value and gradient) starting at `init` and returns
/// the best iterate seen.
///
/// The initial evaluation must succeed; a failed or non-finite evaluation
/// later on ends the run at the best iterate so far.
pub fn minimize<F>(init: &[f64], config: &AdamConfig, mut objective: F) -> Result<AdamOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut params = init.to_vec();
    let (initial_value, mut grad) = objective(&params)?;
    let mut best_params = params.clone();
    let mut best_value = initial_value;
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut iterations_run = 0;

    for t in 1..=config.iterations {
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let c1 = 1.0 - config.beta1.powi(t as i32);
        let c2 = 1.0 - config.beta2.powi(t as i32);
        for i in 0..params.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        iterations_run = t;
        match objective(&params) {
            Ok((value, g)) if value.is_finite() => {
                if value < best_value {
                    best_value = value;
                    best_params.clone_from(&params);
                }
                grad = g;
            }
            _ => break,
        }
    }
    Ok(AdamOutcome {
        best_params,
        best_value,
        initial_value,
        iterations_run,
    })
}
