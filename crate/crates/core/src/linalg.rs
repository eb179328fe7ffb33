//! Dense factorization helpers and a compact row-sparse matrix for the banded
//! multistep operators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Default diagonal jitter, relative to `trace / size`.
pub const DEFAULT_JITTER: f64 = 1e-8;
/// Upper bound of the jitter escalation, relative to `trace / size`.
pub const MAX_JITTER: f64 = 1e-4;

/// Row-sparse matrix; each row holds `(column, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|r| {
                (0..m.ncols())
                    .filter(|&c| m[(r, c)] != 0.0)
                    .map(|c| (c, m[(r, c)]))
                    .collect()
            })
            .collect();
        Self {
            ncols: m.ncols(),
            rows,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            ncols: n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// `(S ⊗ I_n) v`.
    pub fn apply_lifted(&self, v: &DVector<f64>, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows() * n);
        for (w, row) in self.rows.iter().enumerate() {
            for &(k, b) in row {
                for i in 0..n {
                    out[w * n + i] += b * v[k * n + i];
                }
            }
        }
        out
    }

    /// `(S ⊗ I_n)ᵀ v`.
    pub fn apply_transpose_lifted(&self, v: &DVector<f64>, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols * n);
        for (w, row) in self.rows.iter().enumerate() {
            for &(k, b) in row {
                for i in 0..n {
                    out[k * n + i] += b * v[w * n + i];
                }
            }
        }
        out
    }

    /// `(S ⊗ I_n) G (S ⊗ I_n)ᵀ` for a `Kn × Kn` matrix `G`.
    pub fn congruence_lifted(&self, g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let wn = self.nrows() * n;
        let kn = self.ncols * n;
        // T = (S ⊗ I) G, built column by column to stay cache friendly.
        let mut t = DMatrix::zeros(wn, kn);
        for c in 0..kn {
            let gcol = g.column(c);
            let mut tcol = t.column_mut(c);
            for (w, row) in self.rows.iter().enumerate() {
                for &(k, b) in row {
                    for i in 0..n {
                        tcol[w * n + i] += b * gcol[k * n + i];
                    }
                }
            }
        }
        let mut out = DMatrix::zeros(wn, wn);
        for (w2, row) in self.rows.iter().enumerate() {
            for &(k2, b2) in row {
                for j in 0..n {
                    let src = t.column(k2 * n + j).clone_owned();
                    let mut dst = out.column_mut(w2 * n + j);
                    dst.axpy(b2, &src, 1.0);
                }
            }
        }
        out
    }

    /// `(S ⊗ I_n)ᵀ Q (S ⊗ I_n)` for a `Wn × Wn` matrix `Q`.
    pub fn transpose_congruence_lifted(&self, q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let wn = self.nrows() * n;
        let kn = self.ncols * n;
        // U = Q (S ⊗ I), Wn × Kn.
        let mut u = DMatrix::zeros(wn, kn);
        for (w, row) in self.rows.iter().enumerate() {
            for &(k, b) in row {
                for j in 0..n {
                    let src = q.column(w * n + j).clone_owned();
                    let mut dst = u.column_mut(k * n + j);
                    dst.axpy(b, &src, 1.0);
                }
            }
        }
        // P = (S ⊗ I)ᵀ U.
        let mut p = DMatrix::zeros(kn, kn);
        for c in 0..kn {
            let ucol = u.column(c);
            let mut pcol = p.column_mut(c);
            for (w, row) in self.rows.iter().enumerate() {
                for &(k, b) in row {
                    for i in 0..n {
                        pcol[k * n + i] += b * ucol[w * n + i];
                    }
                }
            }
        }
        p
    }

    /// `S Sᵀ`.
    pub fn self_gram(&self) -> DMatrix<f64> {
        let w = self.nrows();
        let mut out = DMatrix::zeros(w, w);
        for r in 0..w {
            for s in 0..w {
                let mut acc = 0.0;
                for &(c, v) in &self.rows[r] {
                    if let Some(&(_, u)) = self.rows[s].iter().find(|(c2, _)| *c2 == c) {
                        acc += v * u;
                    }
                }
                out[(r, s)] = acc;
            }
        }
        out
    }
}

/// A Cholesky factor together with the diagonal jitter that made it succeed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn log_determinant(&self) -> f64 {
        2.0 * self.factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor
            .l_dirty()
            .solve_lower_triangular(b)
            .unwrap_or_else(|| DVector::from_element(b.len(), f64::NAN))
    }
}

/// Factorizes `m + δ I`, starting from `δ = base_rel · tr(m)/size` and
/// multiplying by 10 until `max_rel · tr(m)/size`.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, base_rel: f64, max_rel: f64) -> Result<JitteredCholesky> {
    let size = m.nrows();
    let failure = |max_jitter: f64| Error::FactorizationFailed {
        size,
        max_jitter,
        condition_estimate: condition_estimate(m),
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailed {
            size,
            max_jitter: 0.0,
            condition_estimate: f64::INFINITY,
        });
    }
    let scale = if size == 0 { 1.0 } else { (m.trace() / size as f64).abs().max(f64::MIN_POSITIVE) };
    let mut rel = base_rel;
    loop {
        let jitter = rel * scale;
        let mut shifted = m.clone();
        for i in 0..size {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(shifted) {
            if rel > base_rel {
                log::debug!("cholesky of size {size} needed jitter {jitter:.3e}");
            }
            return Ok(JitteredCholesky { factor, jitter });
        }
        rel = if rel == 0.0 { 1e-10 } else { rel * 10.0 };
        if rel > max_rel * (1.0 + 1e-9) {
            return Err(failure(max_rel * scale));
        }
    }
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 { f64::INFINITY } else { max / min }
}
