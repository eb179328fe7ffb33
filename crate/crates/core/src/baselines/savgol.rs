//! Savitzky–Golay smoothing and differentiation on regular grids.

use nalgebra::DMatrix;

use super::{local_polyfit, DerivativeEstimate, Smoother};
use crate::error::{Error, Result};
use crate::simulate::TrajectoryDataset;

/// Maximum relative deviation of any step from the mean step.
pub const REGULARITY_TOLERANCE: f64 = 1e-9;

/// Least-squares polynomial convolution over `window` samples.
///
/// Interior points use the centred window; the first and last `window / 2`
/// points reuse the nearest full window and evaluate its fit off-centre.
pub fn savgol_smooth(dataset: &TrajectoryDataset, window: usize, degree: usize) -> Result<DerivativeEstimate> {
    let k = dataset.len();
    let n = dataset.state_dim();
    if degree < 1 {
        return Err(Error::InvalidParameter {
            name: "degree".into(),
            reason: "derivative estimation needs degree >= 1".into(),
        });
    }
    if window % 2 == 0 || window <= degree {
        return Err(Error::InvalidParameter {
            name: "window".into(),
            reason: format!("window must be odd and exceed the degree {degree}, got {window}"),
        });
    }
    if k < window {
        return Err(Error::InsufficientData {
            context: "Savitzky-Golay window",
            needed: window,
            got: k,
        });
    }
    let ts = &dataset.timestamps;
    let h = (ts[k - 1] - ts[0]) / (k - 1) as f64;
    let deviation = ts
        .windows(2)
        .map(|w| ((w[1] - w[0]) - h).abs() / h)
        .fold(0.0, f64::max);
    if deviation > REGULARITY_TOLERANCE {
        return Err(Error::IrregularGrid { deviation });
    }

    let half = window / 2;
    let offsets: Vec<f64> = (0..window).map(|j| j as f64 - half as f64).collect();
    let ones = vec![1.0; window];
    let mut states = DMatrix::zeros(k, n);
    let mut derivatives = DMatrix::zeros(k, n);
    for c in 0..k {
        let start = c.saturating_sub(half).min(k - window);
        let at = (c - start) as f64 - half as f64;
        for i in 0..n {
            let y: Vec<f64> = (start..start + window).map(|j| dataset.states[(j, i)]).collect();
            let coef = local_polyfit(&offsets, &ones, &y, degree).ok_or(Error::DegenerateDesign { index: c })?;
            let mut value = 0.0;
            let mut slope = 0.0;
            let mut p = 1.0;
            for (d, cd) in coef.iter().enumerate() {
                value += cd * p;
                if d + 1 < coef.len() {
                    slope += (d + 1) as f64 * coef[d + 1] * p;
                }
                p *= at;
            }
            states[(c, i)] = value;
            derivatives[(c, i)] = slope / h;
        }
    }
    Ok(DerivativeEstimate {
        states,
        derivatives,
        smoother: Smoother::SavitzkyGolay { window, degree },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::loess_smooth;

    fn regular(k: usize, h: f64, f: impl Fn(f64) -> f64) -> TrajectoryDataset {
        let ts: Vec<f64> = (0..k).map(|i| i as f64 * h).collect();
        let xs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        TrajectoryDataset::new(ts, DMatrix::from_column_slice(k, 1, &xs), DMatrix::zeros(k, 1), 0.0, 0).unwrap()
    }

    #[test]
    fn reproduces_cubics_including_edges() {
        let ds = regular(40, 0.1, |t| t * t * t);
        let est = savgol_smooth(&ds, 7, 3).unwrap();
        for c in 0..40 {
            let t = ds.timestamps[c];
            assert!((est.derivatives[(c, 0)] - 3.0 * t * t).abs() < 1e-9, "index {c}");
            assert!((est.states[(c, 0)] - t * t * t).abs() < 1e-9);
        }
    }

    #[test]
    fn sine_derivative_agrees_with_loess() {
        let h = 0.01;
        let k = 629;
        let ds = regular(k, h, f64::sin);
        let sg = savgol_smooth(&ds, 11, 3).unwrap();
        let lo = loess_smooth(&ds, 11.0 / k as f64, 2).unwrap();
        for c in 0..k {
            let t = ds.timestamps[c];
            assert!((sg.derivatives[(c, 0)] - t.cos()).abs() < 1e-3);
            assert!((lo.derivatives[(c, 0)] - t.cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_windows_and_irregular_grids() {
        let ds = regular(30, 0.1, |t| t);
        assert!(savgol_smooth(&ds, 3, 3).is_err());
        assert!(savgol_smooth(&ds, 8, 3).is_err());
        assert!(matches!(savgol_smooth(&ds, 31, 3), Err(Error::InsufficientData { .. })));
        let jittered = crate::simulate::jittered_timestamps(0.0, 3.0, 30, 0.01, 1);
        let xs = DMatrix::from_fn(30, 1, |r, _| jittered[r]);
        let irr = TrajectoryDataset::new(jittered, xs, DMatrix::zeros(30, 1), 0.0, 0).unwrap();
        assert!(matches!(savgol_smooth(&irr, 11, 3), Err(Error::IrregularGrid { .. })));
    }
}
