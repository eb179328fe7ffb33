//! Locally weighted polynomial regression with tricube weights.

use nalgebra::DMatrix;

use super::{local_polyfit, DerivativeEstimate, Smoother};
use crate::error::{Error, Result};
use crate::simulate::TrajectoryDataset;

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let v = 1.0 - u * u * u;
        v * v * v
    }
}

/// LOESS value and first-derivative estimates at every observation time.
///
/// Each local fit uses the `ceil(span · K)` nearest timestamps with tricube
/// weights on the distance scaled by the farthest of them.
pub fn loess_smooth(dataset: &TrajectoryDataset, span: f64, degree: usize) -> Result<DerivativeEstimate> {
    let k = dataset.len();
    let n = dataset.state_dim();
    if degree < 1 {
        return Err(Error::InvalidParameter {
            name: "degree".into(),
            reason: "derivative estimation needs degree >= 1".into(),
        });
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "span".into(),
            reason: format!("span must lie in (0, 1], got {span}"),
        });
    }
    let q = ((span * k as f64).ceil() as usize).min(k);
    if q < degree + 2 {
        return Err(Error::InsufficientData {
            context: "LOESS neighbourhood",
            needed: degree + 2,
            got: q,
        });
    }
    let ts = &dataset.timestamps;
    let mut states = DMatrix::zeros(k, n);
    let mut derivatives = DMatrix::zeros(k, n);
    for c in 0..k {
        let t0 = ts[c];
        // The timestamps are sorted, so the q nearest form a contiguous run.
        let (mut lo, mut hi) = (c, c);
        while hi - lo + 1 < q {
            let left = if lo > 0 { t0 - ts[lo - 1] } else { f64::INFINITY };
            let right = if hi + 1 < k { ts[hi + 1] - t0 } else { f64::INFINITY };
            if left <= right {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let dmax = (t0 - ts[lo]).max(ts[hi] - t0);
        if !(dmax > 0.0) {
            return Err(Error::DegenerateDesign { index: c });
        }
        let s: Vec<f64> = (lo..=hi).map(|j| (ts[j] - t0) / dmax).collect();
        let w: Vec<f64> = s.iter().map(|v| tricube(v.abs())).collect();
        for i in 0..n {
            let y: Vec<f64> = (lo..=hi).map(|j| dataset.states[(j, i)]).collect();
            let coef = local_polyfit(&s, &w, &y, degree).ok_or(Error::DegenerateDesign { index: c })?;
            states[(c, i)] = coef[0];
            derivatives[(c, i)] = coef[1] / dmax;
        }
    }
    Ok(DerivativeEstimate {
        states,
        derivatives,
        smoother: Smoother::Loess { span, degree },
    })
}
