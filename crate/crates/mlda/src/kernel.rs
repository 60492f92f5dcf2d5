//! Single-level Metropolis-Hastings machinery: standard-normal prior,
//! Gaussian likelihood with a precomputed Cholesky factor, random-walk
//! proposals, the accept/reject step, and burn-in step-size tuning.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MldaError, Result};

/// KL coefficient vector θ. Length is fixed for a run; entries stay finite
/// (enforced at the evaluation entry points).
pub type ParameterVector = DVector<f64>;

#[inline]
pub(crate) fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

/// Standard-normal prior log-density: −½‖θ‖² − (R/2)·log 2π.
pub fn log_prior(theta: &ParameterVector) -> Result<f64> {
    if !theta.iter().all(|x| x.is_finite()) {
        return Err(MldaError::numerical(
            "log_prior",
            "non-finite parameter entry",
        ));
    }
    Ok(-0.5 * theta.norm_squared() - 0.5 * theta.len() as f64 * ln_2pi())
}

/// Draw θ ~ N(0, I_R).
pub fn sample_prior(dim: usize, rng: &mut dyn RngCore) -> ParameterVector {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Gaussian observation-noise model N(μ_ε, Σ_ε), factorized once at
/// construction. Also reused for AEM-corrected likelihoods, where the mean
/// shift absorbs μ_ε + μ_B and the covariance absorbs Σ_ε + Σ_B.
#[derive(Debug, Clone)]
pub struct GaussianNoiseModel {
    mean_shift: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_normalizer: f64,
}

impl GaussianNoiseModel {
    pub fn new(mean_shift: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = mean_shift.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(MldaError::config(format!(
                "noise covariance is {}x{} but mean shift has length {m}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..m {
            for j in (i + 1)..m {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * (1.0 + scale) {
                    return Err(MldaError::config("noise covariance is not symmetric"));
                }
            }
        }
        let chol = Cholesky::new(covariance.clone()).ok_or_else(|| {
            MldaError::config("noise covariance is not positive-definite (Cholesky failed)")
        })?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_normalizer = -0.5 * log_det - 0.5 * m as f64 * ln_2pi();
        Ok(Self {
            mean_shift,
            covariance,
            chol,
            log_normalizer,
        })
    }

    /// Σ_ε = std²·I_M with zero mean shift.
    pub fn iid(m: usize, std: f64) -> Result<Self> {
        if std <= 0.0 || !std.is_finite() {
            return Err(MldaError::config("noise std must be positive and finite"));
        }
        Ok(Self::new(
            DVector::zeros(m),
            DMatrix::from_diagonal_element(m, m, std * std),
        )
        .expect("diagonal covariance is SPD"))
    }

    pub fn dim(&self) -> usize {
        self.mean_shift.len()
    }

    pub fn mean_shift(&self) -> &DVector<f64> {
        &self.mean_shift
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Log-density of a raw residual r = d − F(θ) (mean shift applied here).
    pub fn residual_log_density(&self, residual: &DVector<f64>) -> Result<f64> {
        if residual.iter().any(|x| x.is_nan()) {
            return Err(MldaError::numerical(
                "gaussian_log_likelihood",
                "NaN residual",
            ));
        }
        let centered = residual - &self.mean_shift;
        let solved = self.chol.solve(&centered);
        Ok(-0.5 * centered.dot(&solved) + self.log_normalizer)
    }

    /// Draw ε ~ N(mean_shift, Σ) via the stored Cholesky factor.
    pub fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean_shift + self.chol.l() * z
    }
}

/// Log-likelihood L(d | θ) = N(d − F(θ); μ_ε, Σ_ε), normalizer included so
/// that levels with different covariances stay comparable.
pub fn gaussian_log_likelihood(
    model_output: &DVector<f64>,
    noise: &GaussianNoiseModel,
    data: &DVector<f64>,
) -> Result<f64> {
    if model_output.len() != noise.dim() || data.len() != noise.dim() {
        return Err(MldaError::config(format!(
            "likelihood dimension mismatch: output {} / data {} / noise {}",
            model_output.len(),
            data.len(),
            noise.dim()
        )));
    }
    noise.residual_log_density(&(data - model_output))
}

/// Random-walk proposal settings plus the burn-in tuning schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub step_size: f64,
    /// Level-0 steps per tuning window (burn-in only).
    pub tune_interval: usize,
    /// Target acceptance band [low, high]; step is scaled when outside.
    pub target_acceptance: (f64, f64),
    /// Multiplicative factor: shrink by it below band, grow by 1/it above.
    pub tune_factor: f64,
    /// Update one random coordinate per step instead of the full vector.
    pub single_site: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            tune_interval: 100,
            target_acceptance: (0.2, 0.5),
            tune_factor: 0.7,
            single_site: false,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.target_acceptance;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(MldaError::config("step_size must be positive"));
        }
        if self.tune_interval == 0 {
            return Err(MldaError::config("tune_interval must be positive"));
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(MldaError::config(
                "target acceptance band must satisfy 0 < low < high < 1",
            ));
        }
        if !(0.0 < self.tune_factor && self.tune_factor < 1.0) {
            return Err(MldaError::config("tune_factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// θ′ = θ + step_size·ξ with ξ ~ N(0, I_R); symmetric.
pub fn rw_propose(
    theta: &ParameterVector,
    step_size: f64,
    rng: &mut dyn RngCore,
) -> ParameterVector {
    assert!(step_size > 0.0, "rw_propose: step_size must be positive");
    let mut out = theta.clone();
    for x in out.iter_mut() {
        let xi: f64 = StandardNormal.sample(rng);
        *x += step_size * xi;
    }
    out
}

/// Non-blocked variant: perturb a single uniformly chosen coordinate.
pub fn rw_propose_single_site(
    theta: &ParameterVector,
    step_size: f64,
    rng: &mut dyn RngCore,
) -> ParameterVector {
    assert!(step_size > 0.0, "rw_propose: step_size must be positive");
    let mut out = theta.clone();
    let k = rng.random_range(0..out.len());
    let xi: f64 = StandardNormal.sample(rng);
    out[k] += step_size * xi;
    out
}

/// A proposal kernel usable by `mh_step` and the MLDA level-0 subchain.
/// `log_q(from, to)` is log q(to | from); the default is symmetric.
pub trait ProposalKernel {
    fn propose(&self, theta: &ParameterVector, rng: &mut dyn RngCore) -> ParameterVector;

    fn log_q(&self, _from: &ParameterVector, _to: &ParameterVector) -> f64 {
        0.0
    }

    /// Called once before a run with the parameter dimension; kernels with
    /// per-coordinate state allocate and reset it here.
    fn prepare(&mut self, _dim: usize) {}

    /// Burn-in feedback for the elementary update just proposed; tuning
    /// kernels window these results and adjust their own scales. Callers
    /// must invoke it during burn-in only, once per `propose`.
    fn record(&mut self, _accepted: bool, _config: &ProposalConfig) {}

    /// Current scalar step size, if the kernel has one (for reporting).
    /// Per-coordinate kernels report the mean of their scales.
    fn current_step_size(&self) -> Option<f64> {
        None
    }

    /// Elementary Metropolis updates that make up one counted iteration.
    /// A non-blocked kernel sweeps the parameter vector, touching `dim`
    /// coordinates per iteration so that iteration counts stay comparable
    /// with blocked updates; blocked kernels return 1.
    fn updates_per_iteration(&self, _dim: usize) -> usize {
        1
    }
}

/// Acceptance counts for one tuning window.
#[derive(Debug, Clone, Copy, Default)]
struct TuneWindow {
    proposals: u32,
    accepted: u32,
}

impl TuneWindow {
    /// Record one result; at the window boundary return the window's
    /// acceptance rate and reset.
    fn on_result(&mut self, accepted: bool, interval: usize) -> Option<f64> {
        self.proposals += 1;
        self.accepted += accepted as u32;
        if self.proposals as usize >= interval {
            let rate = self.accepted as f64 / self.proposals as f64;
            *self = Self::default();
            Some(rate)
        } else {
            None
        }
    }
}

/// Random walk in the two modes the samplers use. Blocked: one isotropic
/// full-vector move per update, scaled by `step_size`. Non-blocked
/// (`single_site`): cyclic sweeps perturbing one coordinate per update, each
/// coordinate carrying its own scale (initialized to `step_size`) and tuned
/// on its own acceptance window — mirroring a compound one-variable-at-a-time
/// Metropolis. Per-coordinate state is allocated by `prepare`.
#[derive(Debug, Clone)]
pub struct RandomWalkProposal {
    pub step_size: f64,
    pub single_site: bool,
    scales: Vec<f64>,
    windows: Vec<TuneWindow>,
    pooled: TuneWindow,
    cursor: Cell<usize>,
}

impl RandomWalkProposal {
    pub fn new(step_size: f64, single_site: bool) -> Self {
        Self {
            step_size,
            single_site,
            scales: Vec::new(),
            windows: Vec::new(),
            pooled: TuneWindow::default(),
            cursor: Cell::new(0),
        }
    }

    pub fn from_config(config: &ProposalConfig) -> Self {
        Self::new(config.step_size, config.single_site)
    }

    /// Per-coordinate scales (non-blocked mode, after `prepare`).
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }
}

impl ProposalKernel for RandomWalkProposal {
    fn propose(&self, theta: &ParameterVector, rng: &mut dyn RngCore) -> ParameterVector {
        if self.single_site {
            let k = self.cursor.get() % theta.len();
            self.cursor.set((k + 1) % theta.len());
            let scale = self.scales.get(k).copied().unwrap_or(self.step_size);
            assert!(scale > 0.0, "rw_propose: step_size must be positive");
            let mut out = theta.clone();
            let xi: f64 = StandardNormal.sample(rng);
            out[k] += scale * xi;
            out
        } else {
            rw_propose(theta, self.step_size, rng)
        }
    }

    fn prepare(&mut self, dim: usize) {
        if self.single_site {
            self.scales = vec![self.step_size; dim];
            self.windows = vec![TuneWindow::default(); dim];
            self.cursor.set(0);
        }
        self.pooled = TuneWindow::default();
    }

    fn record(&mut self, accepted: bool, config: &ProposalConfig) {
        if self.single_site && !self.scales.is_empty() {
            // Attribute the result to the coordinate `propose` just used.
            let dim = self.scales.len();
            let k = (self.cursor.get() + dim - 1) % dim;
            if let Some(rate) = self.windows[k].on_result(accepted, config.tune_interval) {
                self.scales[k] = tune_step_size(
                    self.scales[k],
                    rate,
                    config.target_acceptance,
                    config.tune_factor,
                );
            }
        } else if let Some(rate) = self.pooled.on_result(accepted, config.tune_interval) {
            self.step_size = tune_step_size(
                self.step_size,
                rate,
                config.target_acceptance,
                config.tune_factor,
            );
        }
    }

    fn current_step_size(&self) -> Option<f64> {
        if self.single_site && !self.scales.is_empty() {
            Some(self.scales.iter().sum::<f64>() / self.scales.len() as f64)
        } else {
            Some(self.step_size)
        }
    }

    fn updates_per_iteration(&self, dim: usize) -> usize {
        if self.single_site {
            dim.max(1)
        } else {
            1
        }
    }
}

/// min{1, exp(Δ log-posterior + log q(rev) − log q(fwd))}. A −∞ proposed
/// posterior yields 0; the incumbent's posterior must be finite.
pub fn mh_accept_prob(
    log_post_proposed: f64,
    log_post_current: f64,
    log_q_forward: f64,
    log_q_reverse: f64,
) -> f64 {
    assert!(
        log_post_current.is_finite(),
        "mh_accept_prob: current log-posterior must be finite"
    );
    if log_post_proposed == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_ratio = (log_post_proposed - log_post_current) + (log_q_reverse - log_q_forward);
    log_ratio.exp().min(1.0)
}

/// Multiplicative step-size update, applied during burn-in only (the caller
/// enforces the phase).
pub fn tune_step_size(
    current_step: f64,
    recent_acceptance: f64,
    band: (f64, f64),
    factor: f64,
) -> f64 {
    debug_assert!((0.0..=1.0).contains(&recent_acceptance));
    if recent_acceptance < band.0 {
        current_step * factor
    } else if recent_acceptance > band.1 {
        current_step / factor
    } else {
        current_step
    }
}

/// Current chain position with cached per-level forward outputs and
/// log-likelihoods. Cached values always correspond to `theta`: states are
/// replaced wholesale on acceptance, never mutated in place.
///
/// Log-likelihood cache entries are keyed by the bias-model version so AEM
/// updates invalidate them without discarding the (expensive) forward output.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: ParameterVector,
    forward: Vec<Option<DVector<f64>>>,
    log_like: Vec<Option<(u64, f64)>>,
    pub log_posterior: Option<f64>,
}

impl ChainState {
    pub fn new(theta: ParameterVector, n_levels: usize) -> Self {
        Self {
            theta,
            forward: vec![None; n_levels],
            log_like: vec![None; n_levels],
            log_posterior: None,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.forward.len()
    }

    pub fn forward_output(&self, level: usize) -> Option<&DVector<f64>> {
        self.forward[level].as_ref()
    }

    pub fn set_forward_output(&mut self, level: usize, output: DVector<f64>) {
        self.forward[level] = Some(output);
    }

    pub fn cached_log_like(&self, level: usize, version: u64) -> Option<f64> {
        match self.log_like[level] {
            Some((v, ll)) if v == version => Some(ll),
            _ => None,
        }
    }

    pub fn set_log_like(&mut self, level: usize, version: u64, value: f64) {
        self.log_like[level] = Some((version, value));
    }
}

/// Log-density evaluator for `mh_step`. Implementations may populate the
/// state's forward-output cache as a side effect.
pub trait TargetDensity {
    fn log_posterior(&mut self, state: &mut ChainState) -> Result<f64>;
}

impl<F> TargetDensity for F
where
    F: FnMut(&ParameterVector) -> Result<f64>,
{
    fn log_posterior(&mut self, state: &mut ChainState) -> Result<f64> {
        self(&state.theta)
    }
}

/// One Metropolis-Hastings cycle with an explicit proposal kernel. Returns
/// whether the proposal was accepted; on rejection the state is untouched.
///
/// The uniform accept/reject draw is consumed on every step regardless of the
/// acceptance probability, keeping RNG streams aligned across runs that
/// differ only in likelihood values.
pub fn mh_step_with_proposal<T: TargetDensity, P: ProposalKernel>(
    state: &mut ChainState,
    target: &mut T,
    proposal: &P,
    rng: &mut dyn RngCore,
) -> Result<bool> {
    let log_post_current = match state.log_posterior {
        Some(v) => v,
        None => {
            let v = target.log_posterior(state)?;
            state.log_posterior = Some(v);
            v
        }
    };
    let theta_new = proposal.propose(&state.theta, rng);
    let mut proposed = ChainState::new(theta_new, state.n_levels());
    let log_post_proposed = target.log_posterior(&mut proposed)?;
    proposed.log_posterior = Some(log_post_proposed);

    let log_q_forward = proposal.log_q(&state.theta, &proposed.theta);
    let log_q_reverse = proposal.log_q(&proposed.theta, &state.theta);
    let alpha = mh_accept_prob(
        log_post_proposed,
        log_post_current,
        log_q_forward,
        log_q_reverse,
    );
    let u: f64 = rng.random();
    if u < alpha {
        *state = proposed;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// One random-walk MH cycle driven by a `ProposalConfig` (Alg. 1). A one-off
/// step carries no sweep state, so the non-blocked mode perturbs a uniformly
/// chosen coordinate.
pub fn mh_step<T: TargetDensity>(
    state: &mut ChainState,
    target: &mut T,
    config: &ProposalConfig,
    rng: &mut dyn RngCore,
) -> Result<bool> {
    if config.single_site {
        struct OneOff(f64);
        impl ProposalKernel for OneOff {
            fn propose(&self, theta: &ParameterVector, rng: &mut dyn RngCore) -> ParameterVector {
                rw_propose_single_site(theta, self.0, rng)
            }
        }
        mh_step_with_proposal(state, target, &OneOff(config.step_size), rng)
    } else {
        let proposal = RandomWalkProposal::from_config(config);
        mh_step_with_proposal(state, target, &proposal, rng)
    }
}

/// Windowed acceptance tracker feeding `tune_step_size` during burn-in.
#[derive(Debug, Clone, Default)]
pub struct StepSizeTuner {
    steps: usize,
    accepted: usize,
}

impl StepSizeTuner {
    /// Record one step; at window boundaries return the window's acceptance
    /// rate and reset.
    pub fn on_step(&mut self, accepted: bool, interval: usize) -> Option<f64> {
        self.steps += 1;
        self.accepted += accepted as usize;
        if self.steps >= interval {
            let rate = self.accepted as f64 / self.steps as f64;
            self.steps = 0;
            self.accepted = 0;
            Some(rate)
        } else {
            None
        }
    }
}
