use msphs::Grid;

use crate::config::MeshSpec;
use crate::error::{BenchError, Result};

/// Evaluation grid for a run: explicit bounds if given, otherwise the
/// inflated bounding box of the noiseless `trajectory`.
pub fn eval_mesh<S: AsRef<[f64]>>(spec: &MeshSpec, trajectory: &[S]) -> Result<Grid> {
    let grid = match &spec.bounds {
        Some(bounds) => Grid::new(
            bounds.iter().map(|b| b[0]).collect(),
            bounds.iter().map(|b| b[1]).collect(),
            spec.resolution,
        )?,
        None => {
            if trajectory.is_empty() {
                return Err(BenchError::EmptyMesh);
            }
            Grid::bounding(trajectory, spec.inflation, spec.resolution)?
        }
    };
    if grid.is_empty() {
        return Err(BenchError::EmptyMesh);
    }
    Ok(grid)
}
