//! Regular evaluation grids over state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned regular grid with the same resolution on every axis.
///
/// Points are ordered with the first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "grid bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.is_empty() || resolution == 0 {
            return Err(Error::InsufficientData {
                context: "evaluation grid",
                needed: 1,
                got: 0,
            });
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidParameter {
                    name: "grid bounds".into(),
                    reason: format!("need finite lower <= upper, got [{l}, {u}]"),
                });
            }
        }
        Ok(Self { lower, upper, resolution })
    }

    /// Bounding box of `states`, each side widened by `inflation` times its extent.
    pub fn bounding<S: AsRef<[f64]>>(states: &[S], inflation: f64, resolution: usize) -> Result<Self> {
        let first = states.first().ok_or(Error::InsufficientData {
            context: "grid bounding box",
            needed: 1,
            got: 0,
        })?;
        let n = first.as_ref().len();
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for s in states {
            for (i, v) in s.as_ref().iter().enumerate() {
                lower[i] = lower[i].min(*v);
                upper[i] = upper[i].max(*v);
            }
        }
        for i in 0..n {
            let pad = inflation * (upper[i] - lower[i]);
            lower[i] -= pad;
            upper[i] += pad;
        }
        Self::new(lower, upper, resolution)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, d: usize) -> Vec<f64> {
        let (l, u) = (self.lower[d], self.upper[d]);
        if self.resolution == 1 {
            return vec![0.5 * (l + u)];
        }
        let step = (u - l) / (self.resolution - 1) as f64;
        (0..self.resolution)
            .map(|i| if i + 1 == self.resolution { u } else { l + i as f64 * step })
            .collect()
    }

    /// Per-axis indices of point `index`.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = index % self.resolution;
            index /= self.resolution;
        }
        out
    }

    pub fn is_interior(&self, index: usize) -> bool {
        self.multi_index(index)
            .iter()
            .all(|&i| i > 0 && i + 1 < self.resolution)
    }

    pub fn spacing(&self, d: usize) -> f64 {
        if self.resolution < 2 {
            0.0
        } else {
            (self.upper[d] - self.lower[d]) / (self.resolution - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|d| self.axis(d)).collect();
        (0..self.len())
            .map(|idx| {
                self.multi_index(idx)
                    .iter()
                    .enumerate()
                    .map(|(d, &i)| axes[d][i])
                    .collect()
            })
            .collect()
    }
}
