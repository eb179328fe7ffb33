//! Field and surface error metrics over an evaluation mesh.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Field points whose predicted or true norm falls below this are skipped by
/// the cosine distance.
pub const COSINE_NORM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub mse: f64,
    pub cosine_distance: f64,
    /// Mesh points that entered the cosine average.
    pub cosine_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub h_mse: f64,
    pub mean_variance: f64,
    pub ratio: f64,
}

fn check_lengths(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(BenchError::LengthMismatch { expected, actual });
    }
    if actual == 0 {
        return Err(BenchError::EmptyMesh);
    }
    Ok(())
}

/// Mean squared field error and mean cosine distance.
pub fn vf_metrics<P: AsRef<[f64]>, T: AsRef<[f64]>>(predicted: &[P], truth: &[T]) -> Result<FieldMetrics> {
    check_lengths(truth.len(), predicted.len())?;
    let mut se = 0.0;
    let mut cos_sum = 0.0;
    let mut used = 0;
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        let mut dot = 0.0;
        let mut pn = 0.0;
        let mut tn = 0.0;
        for (a, b) in p.iter().zip(t) {
            se += (a - b) * (a - b);
            dot += a * b;
            pn += a * a;
            tn += b * b;
        }
        let (pn, tn) = (pn.sqrt(), tn.sqrt());
        if pn >= COSINE_NORM_FLOOR && tn >= COSINE_NORM_FLOOR {
            cos_sum += 1.0 - dot / (pn * tn);
            used += 1;
        }
    }
    if used == 0 {
        return Err(BenchError::AllPointsExcluded);
    }
    Ok(FieldMetrics {
        mse: se / predicted.len() as f64,
        cosine_distance: cos_sum / used as f64,
        cosine_points: used,
    })
}

/// Surface error, mean posterior variance and their ratio.
pub fn h_metrics(mean: &[f64], variance: &[f64], truth: &[f64]) -> Result<SurfaceMetrics> {
    check_lengths(truth.len(), mean.len())?;
    check_lengths(truth.len(), variance.len())?;
    let n = truth.len() as f64;
    let h_mse = mean.iter().zip(truth).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / n;
    let mean_variance = variance.iter().sum::<f64>() / n;
    if !(mean_variance > 0.0) {
        return Err(BenchError::ZeroVariance);
    }
    Ok(SurfaceMetrics {
        h_mse,
        mean_variance,
        ratio: h_mse / mean_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.5, -2.0], vec![0.0, 3.0], vec![0.0, 0.0]]
    }

    #[test]
    fn field_identities() {
        let t = field();
        let same = vf_metrics(&t, &t).unwrap();
        assert_eq!(same.mse, 0.0);
        assert!(same.cosine_distance.abs() < 1e-15);
        assert_eq!(same.cosine_points, 3);

        let neg: Vec<Vec<f64>> = t.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        assert!((vf_metrics(&neg, &t).unwrap().cosine_distance - 2.0).abs() < 1e-15);

        let dbl: Vec<Vec<f64>> = t.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        let m = vf_metrics(&dbl, &t).unwrap();
        let mean_sq = t.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / t.len() as f64;
        assert!((m.mse - mean_sq).abs() < 1e-15);
        assert!(m.cosine_distance.abs() < 1e-15);
    }

    #[test]
    fn field_errors() {
        let zeros = vec![vec![0.0, 0.0]; 3];
        assert!(matches!(vf_metrics(&zeros, &zeros), Err(BenchError::AllPointsExcluded)));
        assert!(matches!(vf_metrics(&zeros[..2], &zeros), Err(BenchError::LengthMismatch { .. })));
    }

    #[test]
    fn surface_identities() {
        let truth = [0.0, 0.5, 2.0, 1.0];
        let exact = h_metrics(&truth, &[0.1; 4], &truth).unwrap();
        assert_eq!((exact.h_mse, exact.ratio), (0.0, 0.0));

        let shifted: Vec<f64> = truth.iter().map(|h| h + 0.3).collect();
        let m = h_metrics(&shifted, &[0.09; 4], &truth).unwrap();
        assert!((m.h_mse - 0.09).abs() < 1e-15);
        assert!((m.ratio - 1.0).abs() < 1e-12);

        assert!(matches!(h_metrics(&truth, &[0.0; 4], &truth), Err(BenchError::ZeroVariance)));
    }
}
