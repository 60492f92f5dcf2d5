//! Bayesian inverse problem for single-phase Darcy flow on the unit square:
//! infer the log-permeability's Karhunen–Loève coefficients θ from noisy
//! pointwise pressure observations. Levels share one θ (the basis is computed
//! on the finest grid and restricted downward), so coarser levels differ only
//! in discretization error — exactly what the adaptive error model corrects.

pub mod covariance;
pub mod grid;
pub mod observe;
pub mod solve;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

pub use covariance::{
    build_covariance_matrix, kl_decompose, kl_decompose_tensor, log_permeability_field,
    restrict_basis, KlBasis,
};
pub use grid::{build_grid_hierarchy, GridLevel};
pub use observe::{observe, ObservationOperator};
pub use solve::{solve_darcy, solve_darcy_with_edges, EdgeConductivities};

use crate::error::{MldaError, Result};
use crate::hierarchy::{ForwardModel, ModelHierarchy};
use crate::kernel::{sample_prior, GaussianNoiseModel, ParameterVector};

/// Problem parameters; defaults reproduce the reference setup (5→17→65
/// grids, σ = 2, λ = 0.3, 24 modes, 25 observations, 1% noise).
#[derive(Debug, Clone, Copy)]
pub struct DarcyConfig {
    pub m0: usize,
    pub n_levels: usize,
    pub sigma: f64,
    pub correlation_length: f64,
    pub n_modes: usize,
    pub noise_std: f64,
    pub obs_per_axis: usize,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self {
            m0: 5,
            n_levels: 3,
            sigma: 2.0,
            correlation_length: 0.3,
            n_modes: 24,
            noise_std: 0.01,
            obs_per_axis: 5,
        }
    }
}

impl DarcyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 2 {
            return Err(MldaError::config("need at least 2 levels"));
        }
        if self.m0 < 3 {
            return Err(MldaError::config("coarsest grid needs m0 >= 3"));
        }
        if self.n_modes == 0 || self.n_modes > self.m0 * self.m0 {
            return Err(MldaError::config(format!(
                "n_modes must lie in 1..={} so every level can carry the basis",
                self.m0 * self.m0
            )));
        }
        if !(self.noise_std > 0.0) {
            return Err(MldaError::config("noise_std must be positive"));
        }
        if self.obs_per_axis == 0 {
            return Err(MldaError::config("need at least one observation per axis"));
        }
        if !(self.sigma > 0.0) || !(self.correlation_length > 0.0) {
            return Err(MldaError::config("sigma and correlation_length must be positive"));
        }
        Ok(())
    }

    pub fn n_observations(&self) -> usize {
        self.obs_per_axis * self.obs_per_axis
    }
}

/// Forward map at one level: θ → log k → pressure solve → observations.
pub struct DarcyLevel {
    pub grid: GridLevel,
    /// modes · diag(√λ): log k = weighted_modes · θ.
    weighted_modes: DMatrix<f64>,
    observation: ObservationOperator,
}

impl DarcyLevel {
    pub fn log_permeability(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        if theta.len() != self.weighted_modes.ncols() {
            return Err(MldaError::config(format!(
                "theta has {} entries, level expects {}",
                theta.len(),
                self.weighted_modes.ncols()
            )));
        }
        Ok(&self.weighted_modes * theta)
    }
}

impl ForwardModel for DarcyLevel {
    fn parameter_dim(&self) -> usize {
        self.weighted_modes.ncols()
    }

    fn output_dim(&self) -> usize {
        self.observation.n_observations()
    }

    fn evaluate(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        let log_k = self.log_permeability(theta)?;
        let k = log_k.map(f64::exp);
        let pressure = solve_darcy(&self.grid, &k)?;
        observe(&pressure, &self.observation)
    }
}

/// Build all level forward maps: one KL decomposition on the finest grid,
/// restricted to each coarser grid.
pub fn build_darcy_levels(config: &DarcyConfig) -> Result<Vec<Arc<DarcyLevel>>> {
    config.validate()?;
    let grids = build_grid_hierarchy(config.m0, config.n_levels)?;
    let finest = *grids.last().unwrap();
    let fine_basis = kl_decompose_tensor(
        &finest,
        config.sigma,
        config.correlation_length,
        config.n_modes,
    )?;
    grids
        .iter()
        .map(|grid| {
            let basis = if grid.m == finest.m {
                fine_basis.clone()
            } else {
                restrict_basis(&fine_basis, &finest, grid)?
            };
            let weighted_modes = {
                let mut modes = basis.modes;
                for r in 0..basis.eigenvalues.len() {
                    let s = basis.eigenvalues[r].sqrt();
                    modes.column_mut(r).scale_mut(s);
                }
                modes
            };
            Ok(Arc::new(DarcyLevel {
                grid: *grid,
                weighted_modes,
                observation: ObservationOperator::lattice(grid, config.obs_per_axis)?,
            }))
        })
        .collect()
}

pub fn noise_model(config: &DarcyConfig) -> Result<GaussianNoiseModel> {
    GaussianNoiseModel::iid(config.n_observations(), config.noise_std)
}

/// Assemble the full sampling hierarchy for a given data vector.
pub fn build_hierarchy(
    config: &DarcyConfig,
    subchain_lengths: &[usize],
    data: DVector<f64>,
    aem: bool,
) -> Result<ModelHierarchy> {
    let levels = build_darcy_levels(config)?;
    let forward_maps: Vec<Arc<dyn ForwardModel>> = levels
        .into_iter()
        .map(|l| l as Arc<dyn ForwardModel>)
        .collect();
    ModelHierarchy::new(forward_maps, subchain_lengths, noise_model(config)?, data, aem)
}

/// Ground truth and observations for a synthetic experiment.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub theta_true: ParameterVector,
    /// Finest-level model output at θ_true, before noise.
    pub noiseless: DVector<f64>,
    /// noiseless + ε, ε ~ N(0, Σ_ε).
    pub observations: DVector<f64>,
}

/// Draw θ_true from the prior, push it through the finest forward map, and
/// perturb with observation noise. All randomness comes from `rng`.
pub fn generate_synthetic_data(
    levels: &[Arc<DarcyLevel>],
    noise: &GaussianNoiseModel,
    rng: &mut dyn RngCore,
) -> Result<SyntheticData> {
    let finest = levels
        .last()
        .ok_or_else(|| MldaError::config("no levels supplied"))?;
    let theta_true = sample_prior(finest.parameter_dim(), rng);
    let noiseless = finest.evaluate(&theta_true)?;
    if noise.dim() != noiseless.len() {
        return Err(MldaError::config("noise model does not match observation count"));
    }
    let observations = &noiseless + noise.sample(rng);
    Ok(SyntheticData {
        theta_true,
        noiseless,
        observations,
    })
}
