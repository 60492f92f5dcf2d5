//! TOML run configuration. Every default reproduces the reference Darcy
//! experiment, so an empty config file (or none at all) runs the benchmark
//! exactly as published; individual fields override piecemeal.

use std::path::{Path, PathBuf};

use mlda::darcy::DarcyConfig;
use mlda::hierarchy::MldaOptions;
use mlda::kernel::ProposalConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Forward-problem geometry and prior hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Coarsest grid resolution per axis; finer levels refine 4x in cells.
    pub m0: usize,
    pub n_levels: usize,
    /// Number of retained KL modes (= parameter dimension).
    pub n_modes: usize,
    /// Prior marginal standard deviation of the log-permeability field.
    pub sigma: f64,
    pub correlation_length: f64,
    pub noise_std: f64,
    /// Observation lattice size per axis (interior, evenly spaced).
    pub obs_per_axis: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let d = DarcyConfig::default();
        Self {
            m0: d.m0,
            n_levels: d.n_levels,
            n_modes: d.n_modes,
            sigma: d.sigma,
            correlation_length: d.correlation_length,
            noise_std: d.noise_std,
            obs_per_axis: d.obs_per_axis,
        }
    }
}

/// Sampler settings: chain layout, proposal tuning, and the error model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Coarse-chain length per fine-level proposal, one entry per level
    /// below the finest.
    pub subchain_lengths: Vec<usize>,
    pub n_chains: usize,
    /// Retained samples per chain (after burn-in).
    pub n_samples: usize,
    pub n_burnin: usize,
    /// Enable the adaptive error model on coarse likelihoods.
    pub aem: bool,
    /// Keep the error model fixed after burn-in instead of adapting forever.
    pub freeze_aem_after_burnin: bool,
    /// Chain i is seeded with base_seed + i.
    pub base_seed: u64,
    pub step_size: f64,
    pub tune_interval: usize,
    pub target_acceptance: (f64, f64),
    pub tune_factor: f64,
    /// Non-blocked random walk: each iteration sweeps the coordinates one at
    /// a time instead of perturbing the whole vector at once.
    pub single_site: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let p = ProposalConfig::default();
        Self {
            subchain_lengths: vec![5, 5],
            n_chains: 4,
            n_samples: 5000,
            n_burnin: 2000,
            aem: true,
            freeze_aem_after_burnin: false,
            base_seed: 20250815,
            step_size: p.step_size,
            tune_interval: p.tune_interval,
            target_acceptance: p.target_acceptance,
            tune_factor: p.tune_factor,
            single_site: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub sampling: SamplingConfig,
}

impl RunConfig {
    /// Parses a TOML config file. Unknown keys are rejected so typos fail
    /// loudly instead of silently running the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("cannot parse {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.darcy_config().validate()?;
        self.proposal_config().validate()?;
        if self.sampling.subchain_lengths.len() + 1 != self.problem.n_levels {
            return Err(CliError::config(format!(
                "subchain_lengths has {} entries but {} levels need {}",
                self.sampling.subchain_lengths.len(),
                self.problem.n_levels,
                self.problem.n_levels - 1
            )));
        }
        if self.sampling.n_chains == 0 {
            return Err(CliError::config("n_chains must be at least 1"));
        }
        if self.sampling.n_samples == 0 {
            return Err(CliError::config("n_samples must be at least 1"));
        }
        Ok(())
    }

    pub fn darcy_config(&self) -> DarcyConfig {
        DarcyConfig {
            m0: self.problem.m0,
            n_levels: self.problem.n_levels,
            sigma: self.problem.sigma,
            correlation_length: self.problem.correlation_length,
            n_modes: self.problem.n_modes,
            noise_std: self.problem.noise_std,
            obs_per_axis: self.problem.obs_per_axis,
        }
    }

    pub fn proposal_config(&self) -> ProposalConfig {
        ProposalConfig {
            step_size: self.sampling.step_size,
            tune_interval: self.sampling.tune_interval,
            target_acceptance: self.sampling.target_acceptance,
            tune_factor: self.sampling.tune_factor,
            single_site: self.sampling.single_site,
        }
    }

    pub fn mlda_options(&self) -> MldaOptions {
        MldaOptions {
            proposal: self.proposal_config(),
            freeze_aem_after_burnin: self.sampling.freeze_aem_after_burnin,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub aem: Option<bool>,
    pub chains: Option<usize>,
    pub samples: Option<usize>,
    pub burnin: Option<usize>,
}

impl RunConfig {
    pub fn apply(&mut self, overrides: Overrides) -> Result<()> {
        if let Some(seed) = overrides.seed {
            self.sampling.base_seed = seed;
        }
        if let Some(aem) = overrides.aem {
            self.sampling.aem = aem;
        }
        if let Some(chains) = overrides.chains {
            self.sampling.n_chains = chains;
        }
        if let Some(samples) = overrides.samples {
            self.sampling.n_samples = samples;
        }
        if let Some(burnin) = overrides.burnin {
            self.sampling.n_burnin = burnin;
        }
        self.validate()
    }
}

/// Loads `path` if given, otherwise starts from the benchmark defaults, then
/// applies command-line overrides.
pub fn resolve_config(path: Option<&PathBuf>, overrides: Overrides) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply(overrides)?;
    Ok(config)
}
