//! Port-Hamiltonian GP regression on prefiltered derivative labels.

use crate::error::Result;
use crate::grid::Grid;
use crate::inference::{
    fit_design, initial_hyperparameters, Anchor, FieldPrediction, FieldPredictor, FitConfig, FitReport, GpDesign,
    HamiltonianPosterior, Hyperparameters, PhsGp, ANCHOR_JITTER,
};
use crate::phs_models::PhsStructure;
use crate::simulate::TrajectoryDataset;

use super::{DerivativeEstimate, Smoother};

/// Direct-observation design: labels `ẋ_est(t_k) − G(x_k) u_k` at the smoothed states.
pub fn derivative_design(
    dataset: &TrajectoryDataset,
    estimate: &DerivativeEstimate,
    structure: PhsStructure,
) -> Result<GpDesign> {
    let states = estimate.state_rows();
    let labels: Vec<Vec<f64>> = estimate
        .derivative_rows()
        .into_iter()
        .enumerate()
        .map(|(k, d)| {
            let gu = structure.port_apply(&states[k], &dataset.input(k));
            d.iter().zip(gu).map(|(a, b)| a - b).collect()
        })
        .collect();
    GpDesign::direct(states, &labels)
}

#[derive(Debug, Clone)]
pub struct GpPhsModel {
    estimate: DerivativeEstimate,
    gp: PhsGp,
}

impl GpPhsModel {
    pub fn new(
        dataset: &TrajectoryDataset,
        estimate: DerivativeEstimate,
        structure: PhsStructure,
        hyper: Hyperparameters,
        jitter: f64,
    ) -> Result<Self> {
        let design = derivative_design(dataset, &estimate, structure)?;
        let gp = PhsGp::assemble(structure, hyper, design, jitter)?;
        Ok(Self { estimate, gp })
    }

    /// Smooths the dataset, then fits all hyperparameters (label noise included)
    /// by marginal likelihood.
    pub fn fit(
        dataset: &TrajectoryDataset,
        smoother: Smoother,
        structure: PhsStructure,
        config: &FitConfig,
    ) -> Result<(Self, FitReport)> {
        let estimate = smoother.apply(dataset)?;
        let design = derivative_design(dataset, &estimate, structure)?;
        let labels: Vec<Vec<f64>> = design
            .targets
            .as_slice()
            .chunks(structure.state_dim())
            .map(<[f64]>::to_vec)
            .collect();
        let init = initial_hyperparameters(
            structure,
            &design.states,
            &estimate.derivative_rows(),
            &labels,
            1e-2,
        )?;
        let (gp, report) = fit_design(structure, &design, &init, config)?;
        Ok((Self { estimate, gp }, report))
    }

    pub fn estimate(&self) -> &DerivativeEstimate {
        &self.estimate
    }

    pub fn engine(&self) -> &PhsGp {
        &self.gp
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        self.gp.hyperparameters()
    }

    pub fn hamiltonian_posterior(&self, anchor: &Anchor) -> Result<HamiltonianPosterior> {
        self.gp.hamiltonian_posterior(anchor, ANCHOR_JITTER)
    }

    pub fn field_from_surface_check(&self, anchor: &Anchor, grid: &Grid) -> Result<f64> {
        let surface = self.hamiltonian_posterior(anchor)?;
        self.gp.field_from_surface_check(&surface, grid)
    }
}

impl FieldPredictor for GpPhsModel {
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
