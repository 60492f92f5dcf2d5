//! The MLDA recursion: subchains on coarse levels generate proposals for
//! finer levels, with delayed-acceptance correction and revert-on-reject
//! subchain restarts (a rejected level-ℓ proposal restarts the next
//! level-(ℓ−1) subchain from the retained level-ℓ state).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::aem::{corrected_noise_model, BiasModel};
use crate::error::{MldaError, Result};
use crate::kernel::{
    gaussian_log_likelihood, log_prior, mh_step_with_proposal, ChainState, GaussianNoiseModel,
    ParameterVector, ProposalConfig, ProposalKernel, RandomWalkProposal,
    TargetDensity,
};

/// Parameters-to-observations operator at one level. Implementations must be
/// pure: same θ, same level ⇒ bit-identical output within a run.
pub trait ForwardModel: Send + Sync {
    fn parameter_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn evaluate(&self, theta: &ParameterVector) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LikelihoodMode {
    Raw,
    AemCorrected,
}

/// One level of the hierarchy: forward map, subchain length (absent on the
/// finest level), and which likelihood the level's DA screening uses.
pub struct LevelSpec {
    pub forward: Arc<dyn ForwardModel>,
    pub subchain_length: Option<usize>,
    pub likelihood_mode: LikelihoodMode,
}

/// Immutable description of the full hierarchy: levels 0 (coarsest) to L
/// (finest), one shared prior (standard normal) and one shared noise model.
/// Safe to share across concurrently running chains.
pub struct ModelHierarchy {
    levels: Vec<LevelSpec>,
    pub data: DVector<f64>,
    pub noise: GaussianNoiseModel,
}

impl ModelHierarchy {
    /// `aem` selects bias-corrected likelihoods on levels 0..L−1; level L
    /// always uses the exact likelihood.
    pub fn new(
        forward_maps: Vec<Arc<dyn ForwardModel>>,
        subchain_lengths: &[usize],
        noise: GaussianNoiseModel,
        data: DVector<f64>,
        aem: bool,
    ) -> Result<Self> {
        if forward_maps.len() < 2 {
            return Err(MldaError::config("hierarchy requires at least 2 levels"));
        }
        let top = forward_maps.len() - 1;
        if subchain_lengths.len() != top {
            return Err(MldaError::config(format!(
                "expected {} subchain lengths for {} levels, got {}",
                top,
                forward_maps.len(),
                subchain_lengths.len()
            )));
        }
        if subchain_lengths.iter().any(|&j| j == 0) {
            return Err(MldaError::config("subchain lengths must be >= 1"));
        }
        let m = noise.dim();
        if data.len() != m {
            return Err(MldaError::config("data length does not match noise model"));
        }
        let r = forward_maps[0].parameter_dim();
        for (level, f) in forward_maps.iter().enumerate() {
            if f.output_dim() != m {
                return Err(MldaError::config(format!(
                    "forward map at level {level} emits {} values, expected {m}",
                    f.output_dim()
                )));
            }
            if f.parameter_dim() != r {
                return Err(MldaError::config(format!(
                    "forward map at level {level} takes {} parameters, expected {r}",
                    f.parameter_dim()
                )));
            }
        }
        let levels = forward_maps
            .into_iter()
            .enumerate()
            .map(|(level, forward)| LevelSpec {
                forward,
                subchain_length: (level < top).then(|| subchain_lengths[level]),
                likelihood_mode: if aem && level < top {
                    LikelihoodMode::AemCorrected
                } else {
                    LikelihoodMode::Raw
                },
            })
            .collect();
        Ok(Self {
            levels,
            data,
            noise,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn forward_map(&self, level: usize) -> &dyn ForwardModel {
        self.levels[level].forward.as_ref()
    }

    pub fn level(&self, level: usize) -> &LevelSpec {
        &self.levels[level]
    }

    pub fn subchain_length(&self, level: usize) -> usize {
        self.levels[level]
            .subchain_length
            .expect("finest level has no subchain")
    }

    pub fn parameter_dim(&self) -> usize {
        self.levels[0].forward.parameter_dim()
    }

    pub fn uses_aem(&self) -> bool {
        self.levels
            .iter()
            .any(|l| l.likelihood_mode == LikelihoodMode::AemCorrected)
    }
}

/// Per-level counters. `proposals`/`accepted` cover distinct proposals only;
/// subchains that return the incumbent unchanged are tallied as
/// `trivial_proposals` (their DA ratio is identically 1) so acceptance rates
/// reflect genuine moves.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub proposals: u64,
    pub accepted: u64,
    pub trivial_proposals: u64,
    pub forward_evaluations: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MldaStats {
    pub burnin: Vec<LevelStats>,
    pub sampling: Vec<LevelStats>,
}

impl MldaStats {
    pub fn new(n_levels: usize) -> Self {
        Self {
            burnin: vec![LevelStats::default(); n_levels],
            sampling: vec![LevelStats::default(); n_levels],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.sampling.len()
    }

    /// Post-burn-in acceptance rate over distinct proposals at a level.
    pub fn acceptance_rate(&self, level: usize) -> Result<f64> {
        let s = &self.sampling[level];
        if s.proposals == 0 {
            return Err(MldaError::config(format!(
                "no post-burn-in proposals recorded at level {level}"
            )));
        }
        Ok(s.accepted as f64 / s.proposals as f64)
    }

    pub fn total_forward_evaluations(&self, level: usize) -> u64 {
        self.burnin[level].forward_evaluations + self.sampling[level].forward_evaluations
    }
}

/// One kept sample: θ, whether the top-level step moved, and the level-L
/// log-likelihood of the retained state.
#[derive(Debug, Clone)]
pub struct TraceSample {
    pub theta: ParameterVector,
    pub accepted: bool,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub samples: Vec<TraceSample>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.theta.len())
    }

    pub fn push(&mut self, theta: ParameterVector, accepted: bool, log_likelihood: f64) {
        self.samples.push(TraceSample {
            theta,
            accepted,
            log_likelihood,
        });
    }

    /// Samples as an N×R matrix (row per kept sample).
    pub fn theta_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let r = self.dim();
        DMatrix::from_fn(n, r, |i, j| self.samples[i].theta[j])
    }

    pub fn parameter_column(&self, index: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.theta[index]).collect()
    }

    /// Fraction of kept samples whose top-level step moved.
    pub fn moved_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.accepted).count() as f64 / self.samples.len() as f64
    }
}

/// Instrumentation hooks. All events fire from the (sequential) chain thread.
pub trait MldaObserver {
    fn on_run_start(&mut self, _initial: &ParameterVector) {}
    fn on_subchain_start(&mut self, _level: usize, _init: &ParameterVector) {}
    fn on_da_decision(
        &mut self,
        _level: usize,
        _proposal: &ParameterVector,
        _accepted: bool,
        _retained: &ParameterVector,
    ) {
    }
    fn on_level0_step(
        &mut self,
        _proposal: &ParameterVector,
        _accepted: bool,
        _retained: &ParameterVector,
    ) {
    }
}

/// Delayed-acceptance probability at level ℓ (Alg. 2 step 3):
/// min{1, exp((llf′ − llf) − (llc′ − llc))}. The coarse ratio divides out the
/// subchain proposal's bias; no other q-ratio term appears.
pub fn delayed_accept_prob(
    log_like_fine_proposed: f64,
    log_like_fine_current: f64,
    log_like_coarse_proposed: f64,
    log_like_coarse_current: f64,
) -> f64 {
    assert!(
        log_like_fine_current.is_finite() && log_like_coarse_current.is_finite(),
        "delayed_accept_prob: current-state log-likelihoods must be finite"
    );
    assert!(
        !log_like_coarse_proposed.is_nan(),
        "delayed_accept_prob: proposed coarse log-likelihood is NaN"
    );
    if log_like_fine_proposed == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_ratio = (log_like_fine_proposed - log_like_fine_current)
        - (log_like_coarse_proposed - log_like_coarse_current);
    log_ratio.exp().min(1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct MldaOptions {
    pub proposal: ProposalConfig,
    /// Stop AEM moment updates once burn-in ends (default: keep adapting).
    pub freeze_aem_after_burnin: bool,
}

impl Default for MldaOptions {
    fn default() -> Self {
        Self {
            proposal: ProposalConfig::default(),
            freeze_aem_after_burnin: false,
        }
    }
}

/// Output of a full run.
pub struct MldaRun {
    pub trace: Trace,
    pub stats: MldaStats,
    /// Final AEM state (present iff the hierarchy uses corrected likelihoods).
    pub bias: Option<BiasModel>,
    /// Level-0 step size after burn-in tuning, if the proposal has one.
    pub final_step_size: Option<f64>,
}

/// One MLDA chain: owns the (possibly adapting) proposal, the per-chain AEM
/// state, per-level statistics, and the corrected-likelihood cache. The
/// hierarchy itself stays immutable and shared.
pub struct MldaSampler<'a, P: ProposalKernel + Clone> {
    hierarchy: &'a ModelHierarchy,
    options: MldaOptions,
    pub proposal: P,
    bias: Option<BiasModel>,
    /// Per-level corrected noise model, keyed by the bias version it was
    /// built from.
    corrected: Vec<Option<(u64, GaussianNoiseModel)>>,
    stats: MldaStats,
    in_burnin: bool,
    observer: Option<&'a mut dyn MldaObserver>,
    last_level0_proposal: Option<ParameterVector>,
}

impl<'a> MldaSampler<'a, RandomWalkProposal> {
    pub fn new(hierarchy: &'a ModelHierarchy, options: MldaOptions) -> Result<Self> {
        let proposal = RandomWalkProposal::from_config(&options.proposal);
        Self::with_proposal(hierarchy, options, proposal)
    }
}

impl<'a, P: ProposalKernel + Clone> MldaSampler<'a, P> {
    pub fn with_proposal(
        hierarchy: &'a ModelHierarchy,
        options: MldaOptions,
        mut proposal: P,
    ) -> Result<Self> {
        options.proposal.validate()?;
        proposal.prepare(hierarchy.parameter_dim());
        let bias = if hierarchy.uses_aem() {
            Some(BiasModel::new(hierarchy.n_levels(), hierarchy.noise.dim())?)
        } else {
            None
        };
        Ok(Self {
            hierarchy,
            options,
            proposal,
            bias,
            corrected: vec![None; hierarchy.n_levels()],
            stats: MldaStats::new(hierarchy.n_levels()),
            in_burnin: false,
            observer: None,
            last_level0_proposal: None,
        })
    }

    pub fn set_observer(&mut self, observer: &'a mut dyn MldaObserver) {
        self.observer = Some(observer);
    }

    pub fn stats(&self) -> &MldaStats {
        &self.stats
    }

    pub fn bias_model(&self) -> Option<&BiasModel> {
        self.bias.as_ref()
    }

    fn stats_level(&mut self, level: usize) -> &mut LevelStats {
        if self.in_burnin {
            &mut self.stats.burnin[level]
        } else {
            &mut self.stats.sampling[level]
        }
    }

    fn fire_run_start(&mut self, initial: &ParameterVector) {
        if let Some(obs) = self.observer.as_mut() {
            obs.on_run_start(initial);
        }
    }

    fn fire_subchain_start(&mut self, level: usize, init: &ParameterVector) {
        if let Some(obs) = self.observer.as_mut() {
            obs.on_subchain_start(level, init);
        }
    }

    fn fire_da(
        &mut self,
        level: usize,
        proposal: &ParameterVector,
        accepted: bool,
        retained: &ParameterVector,
    ) {
        if let Some(obs) = self.observer.as_mut() {
            obs.on_da_decision(level, proposal, accepted, retained);
        }
    }

    fn evaluate_forward(&mut self, state: &mut ChainState, level: usize) -> Result<()> {
        if state.forward_output(level).is_some() {
            return Ok(());
        }
        let output = self
            .hierarchy
            .forward_map(level)
            .evaluate(&state.theta)
            .map_err(|e| match e {
                err @ MldaError::Evaluation { .. } => err,
                other => MldaError::Evaluation {
                    level,
                    message: other.to_string(),
                    theta: state.theta.iter().copied().collect(),
                },
            })?;
        state.set_forward_output(level, output);
        self.stats_level(level).forward_evaluations += 1;
        Ok(())
    }

    fn uses_corrected(&self, level: usize) -> bool {
        self.bias.is_some()
            && self.hierarchy.level(level).likelihood_mode == LikelihoodMode::AemCorrected
    }

    /// Cache key for level log-likelihoods: corrected levels are invalidated
    /// whenever the bias model advances.
    fn likelihood_version(&self, level: usize) -> u64 {
        if self.uses_corrected(level) {
            self.bias.as_ref().unwrap().version()
        } else {
            0
        }
    }

    fn ensure_corrected_noise(&mut self, level: usize) -> Result<()> {
        let bias = self.bias.as_ref().expect("corrected level without bias");
        let version = bias.version();
        if matches!(self.corrected[level], Some((v, _)) if v == version) {
            return Ok(());
        }
        let (bias_mean, bias_cov) = bias.total_bias(level);
        let model = corrected_noise_model(&self.hierarchy.noise, &bias_mean, &bias_cov)?;
        self.corrected[level] = Some((version, model));
        Ok(())
    }

    /// Level log-likelihood under the *current* bias model, recomputed from
    /// the cached forward output when only the bias version changed.
    fn level_log_likelihood(&mut self, state: &mut ChainState, level: usize) -> Result<f64> {
        let version = self.likelihood_version(level);
        if let Some(ll) = state.cached_log_like(level, version) {
            return Ok(ll);
        }
        self.evaluate_forward(state, level)?;
        let ll = if self.uses_corrected(level) {
            self.ensure_corrected_noise(level)?;
            let noise = &self.corrected[level].as_ref().unwrap().1;
            gaussian_log_likelihood(
                state.forward_output(level).unwrap(),
                noise,
                &self.hierarchy.data,
            )?
        } else {
            gaussian_log_likelihood(
                state.forward_output(level).unwrap(),
                &self.hierarchy.noise,
                &self.hierarchy.data,
            )?
        };
        state.set_log_like(level, version, ll);
        Ok(ll)
    }

    /// One level-0 RWMH step (Alg. 1) targeting prior × level-0 likelihood.
    fn step_level0(&mut self, state: &mut ChainState, rng: &mut dyn RngCore) -> Result<bool> {
        struct Level0Target<'s, 'a, P: ProposalKernel + Clone>(&'s mut MldaSampler<'a, P>);
        impl<P: ProposalKernel + Clone> TargetDensity for Level0Target<'_, '_, P> {
            fn log_posterior(&mut self, state: &mut ChainState) -> Result<f64> {
                let lp = log_prior(&state.theta)?;
                let ll = self.0.level_log_likelihood(state, 0)?;
                self.0.last_level0_proposal = Some(state.theta.clone());
                Ok(lp + ll)
            }
        }

        // The kernel is moved out for the step because the target borrows
        // the sampler; sweep cursors and tuning state ride along and are
        // written back afterwards.
        let mut proposal = self.proposal.clone();
        let accepted = {
            let mut target = Level0Target(self);
            mh_step_with_proposal(state, &mut target, &proposal, rng)?
        };
        if self.in_burnin {
            proposal.record(accepted, &self.options.proposal);
        }
        self.proposal = proposal;

        let stats = self.stats_level(0);
        stats.proposals += 1;
        stats.accepted += accepted as u64;

        if let Some(prop_theta) = self.last_level0_proposal.take() {
            if let Some(obs) = self.observer.as_mut() {
                obs.on_level0_step(&prop_theta, accepted, &state.theta);
            }
        }
        Ok(accepted)
    }

    /// Run the level-ℓ subchain of length J_ℓ starting from the parent's
    /// retained state (Alg. 2 steps 1 and 6).
    fn subchain(
        &mut self,
        level: usize,
        parent_state: &ChainState,
        rng: &mut dyn RngCore,
    ) -> Result<ChainState> {
        self.fire_subchain_start(level, &parent_state.theta);
        let mut state = parent_state.clone();
        let length = self.hierarchy.subchain_length(level);
        if level == 0 {
            // The cached level-0 posterior may predate the latest AEM update;
            // recompute lazily from the cached forward output.
            state.log_posterior = None;
            let updates = self
                .proposal
                .updates_per_iteration(self.hierarchy.parameter_dim());
            for _ in 0..length * updates {
                self.step_level0(&mut state, rng)?;
            }
        } else {
            for _ in 0..length {
                let (next, _) = self.da_step(level, state, rng)?;
                state = next;
            }
        }
        Ok(state)
    }

    /// One delayed-acceptance step at level ℓ ≥ 1 (Alg. 2 steps 1–8).
    /// Returns the new state and whether the chain moved.
    fn da_step(
        &mut self,
        level: usize,
        state: ChainState,
        rng: &mut dyn RngCore,
    ) -> Result<(ChainState, bool)> {
        debug_assert!(level >= 1);
        let mut state = state;
        let child = self.subchain(level - 1, &state, rng)?;

        if child.theta == state.theta {
            // Entire subchain rejected: the proposal equals the incumbent and
            // the DA ratio is identically 1. No new evaluation; the retained
            // state still contributes its bias sample for this iteration.
            self.stats_level(level).trivial_proposals += 1;
            self.record_retained_bias(level, &state);
            self.fire_da(level, &state.theta, true, &state.theta);
            return Ok((state, false));
        }

        let mut child = child;
        self.evaluate_forward(&mut child, level)?;

        let ll_fine_proposed = self.level_log_likelihood(&mut child, level)?;
        let ll_coarse_proposed = self.level_log_likelihood(&mut child, level - 1)?;
        let ll_fine_current = self.level_log_likelihood(&mut state, level)?;
        let ll_coarse_current = self.level_log_likelihood(&mut state, level - 1)?;

        let alpha = delayed_accept_prob(
            ll_fine_proposed,
            ll_fine_current,
            ll_coarse_proposed,
            ll_coarse_current,
        );
        let u: f64 = rng.random();
        let accepted = u < alpha;

        let stats = self.stats_level(level);
        stats.proposals += 1;
        stats.accepted += accepted as u64;

        // The bias sample for iteration i+1 is B_{ℓ−1}(θ^{i+1}) at the
        // *retained* state — a fresh pair on acceptance, the incumbent's pair
        // again on rejection. Sampling the kept chain (not every proposal)
        // keeps the moments anchored to where the level-ℓ chain actually is:
        // while the chain is stuck, repeated samples collapse Σ and pull μ to
        // the exact local bias, which restores acceptance.
        if accepted {
            self.record_retained_bias(level, &child);
            self.fire_da(level, &child.theta, true, &child.theta);
            Ok((child, true))
        } else {
            self.record_retained_bias(level, &state);
            self.fire_da(level, &child.theta, false, &state.theta);
            Ok((state, false))
        }
    }

    /// Record the bias sample B_{ℓ−1}(θ) from the retained level-ℓ state's
    /// cached forward outputs. One sample per level-ℓ iteration; no solves.
    fn record_retained_bias(&mut self, level: usize, state: &ChainState) {
        if self.bias.is_none() || (self.options.freeze_aem_after_burnin && !self.in_burnin) {
            return;
        }
        let f_fine = state
            .forward_output(level)
            .expect("retained state carries its own level output");
        let f_coarse = state
            .forward_output(level - 1)
            .expect("retained state carries the coarse output");
        self.bias
            .as_mut()
            .unwrap()
            .observe_pair(level - 1, f_coarse, f_fine);
    }

    /// One top-level MLDA step.
    pub fn step(
        &mut self,
        state: ChainState,
        rng: &mut dyn RngCore,
    ) -> Result<(ChainState, bool)> {
        self.da_step(self.hierarchy.top_level(), state, rng)
    }

    /// Evaluate all levels at θ⁰ so every ratio has a finite denominator.
    /// All adjacent pairs are available at θ⁰, so each bias term gets its
    /// first sample here and the very first subchain is already corrected.
    pub fn bootstrap(&mut self, initial: ParameterVector) -> Result<ChainState> {
        if !initial.iter().all(|x| x.is_finite()) {
            return Err(MldaError::config("initial state must be finite"));
        }
        let mut state = ChainState::new(initial, self.hierarchy.n_levels());
        for level in 0..self.hierarchy.n_levels() {
            self.evaluate_forward(&mut state, level)?;
        }
        for level in 1..self.hierarchy.n_levels() {
            self.record_retained_bias(level, &state);
        }
        Ok(state)
    }

    /// Full run: `n_burnin` discarded top-level steps (with level-0 step-size
    /// tuning), then `n_samples` kept ones. Tuning and the burn-in/sampling
    /// stats split flip exactly at the boundary.
    pub fn run(
        &mut self,
        n_samples: usize,
        n_burnin: usize,
        initial: ParameterVector,
        rng: &mut dyn RngCore,
    ) -> Result<MldaRun> {
        // Bootstrap evaluations are a one-time cost; book them as burn-in.
        self.in_burnin = true;
        let mut state = self.bootstrap(initial)?;
        self.in_burnin = n_burnin > 0;
        self.fire_run_start(&state.theta);
        let mut trace = Trace::default();
        trace.samples.reserve(n_samples);
        for step_index in 0..(n_burnin + n_samples) {
            if step_index == n_burnin {
                self.in_burnin = false;
            }
            let (next, moved) = self.step(state, rng)?;
            state = next;
            if step_index >= n_burnin {
                let ll = self.level_log_likelihood(&mut state, self.hierarchy.top_level())?;
                trace.push(state.theta.clone(), moved, ll);
            }
        }
        Ok(MldaRun {
            trace,
            stats: self.stats.clone(),
            bias: self.bias.clone(),
            final_step_size: self.proposal.current_step_size(),
        })
    }
}

/// Convenience wrapper: default options, AEM per the hierarchy's modes.
pub fn run_mlda(
    hierarchy: &ModelHierarchy,
    n_samples: usize,
    n_burnin: usize,
    initial: ParameterVector,
    rng: &mut dyn RngCore,
) -> Result<(Trace, MldaStats)> {
    let mut sampler = MldaSampler::new(hierarchy, MldaOptions::default())?;
    let run = sampler.run(n_samples, n_burnin, initial, rng)?;
    Ok((run.trace, run.stats))
}

/// Recursive single MLDA step at a given level, as a standalone entry point.
/// `state` must carry cached forward outputs for all levels (see
/// [`MldaSampler::bootstrap`]).
pub fn mlda_step<P: ProposalKernel + Clone>(
    sampler: &mut MldaSampler<'_, P>,
    level: usize,
    state: ChainState,
    rng: &mut dyn RngCore,
) -> Result<(ChainState, bool)> {
    if level == 0 {
        return Err(MldaError::config("mlda_step requires level >= 1"));
    }
    sampler.da_step(level, state, rng)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubchainViolation {
    pub event_index: usize,
    pub level: usize,
    pub detail: String,
}

/// Observer asserting the revert-on-reject contract: every subchain starts
/// from the state retained by the most recent DA decision (or the initial
/// state before any decision). This is exactly the Fig.-1 distinction between
/// MLDA and MLMCMC's detached coarse chains.
#[derive(Default)]
pub struct SubchainProposalChecker {
    initial: Option<ParameterVector>,
    last_retained: Option<ParameterVector>,
    pub events: usize,
    pub subchain_starts: usize,
    pub violations: Vec<SubchainViolation>,
}

impl MldaObserver for SubchainProposalChecker {
    fn on_run_start(&mut self, initial: &ParameterVector) {
        self.initial = Some(initial.clone());
    }

    fn on_subchain_start(&mut self, level: usize, init: &ParameterVector) {
        self.events += 1;
        self.subchain_starts += 1;
        let expected = self.last_retained.as_ref().or(self.initial.as_ref());
        if let Some(expected) = expected {
            if init != expected {
                self.violations.push(SubchainViolation {
                    event_index: self.events,
                    level,
                    detail: format!(
                        "subchain at level {level} started from a detached state \
                         (expected the retained parent state)"
                    ),
                });
            }
        }
    }

    fn on_da_decision(
        &mut self,
        _level: usize,
        _proposal: &ParameterVector,
        _accepted: bool,
        retained: &ParameterVector,
    ) {
        self.events += 1;
        self.last_retained = Some(retained.clone());
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubchainCheckReport {
    pub top_level_steps: usize,
    pub subchain_starts: usize,
    pub violations: Vec<SubchainViolation>,
}

impl SubchainCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Instrumented run verifying that after every rejection the next subchain
/// restarts from the retained state. Uses default options and a prior draw as
/// the initial state.
pub fn effective_subchain_proposal_check(
    hierarchy: &ModelHierarchy,
    n_steps: usize,
    seed: u64,
) -> Result<SubchainCheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut checker = SubchainProposalChecker::default();
    {
        let mut sampler = MldaSampler::new(hierarchy, MldaOptions::default())?;
        sampler.set_observer(&mut checker);
        let initial = crate::kernel::sample_prior(hierarchy.parameter_dim(), &mut rng);
        sampler.run(n_steps, 0, initial, &mut rng)?;
    }
    Ok(SubchainCheckReport {
        top_level_steps: n_steps,
        subchain_starts: checker.subchain_starts,
        violations: checker.violations,
    })
}

/// Single-level random-walk MH baseline on one forward map (used for the
/// finest-grid comparison run).
pub struct RwmhStats {
    pub burnin: LevelStats,
    pub sampling: LevelStats,
    pub final_step_size: f64,
}

pub fn run_rwmh(
    forward: &dyn ForwardModel,
    noise: &GaussianNoiseModel,
    data: &DVector<f64>,
    config: ProposalConfig,
    n_samples: usize,
    n_burnin: usize,
    initial: ParameterVector,
    rng: &mut dyn RngCore,
) -> Result<(Trace, RwmhStats)> {
    config.validate()?;
    struct SingleLevelTarget<'m> {
        forward: &'m dyn ForwardModel,
        noise: &'m GaussianNoiseModel,
        data: &'m DVector<f64>,
        evaluations: u64,
        last_log_like: f64,
    }
    impl TargetDensity for SingleLevelTarget<'_> {
        fn log_posterior(&mut self, state: &mut ChainState) -> Result<f64> {
            let lp = log_prior(&state.theta)?;
            let output = self.forward.evaluate(&state.theta)?;
            self.evaluations += 1;
            let ll = gaussian_log_likelihood(&output, self.noise, self.data)?;
            self.last_log_like = ll;
            Ok(lp + ll)
        }
    }

    let mut target = SingleLevelTarget {
        forward,
        noise,
        data,
        evaluations: 0,
        last_log_like: f64::NAN,
    };
    let mut proposal = RandomWalkProposal::from_config(&config);
    proposal.prepare(initial.len());
    let mut state = ChainState::new(initial, 1);
    state.log_posterior = Some(target.log_posterior(&mut state)?);
    let mut current_ll = target.last_log_like;

    let mut trace = Trace::default();
    let mut burnin = LevelStats::default();
    let mut sampling = LevelStats::default();
    // One counted iteration is a full sweep for a non-blocked kernel, so
    // sample counts stay comparable between blocked and non-blocked runs.
    let updates = proposal.updates_per_iteration(state.theta.len());
    for step_index in 0..(n_burnin + n_samples) {
        let in_burnin = step_index < n_burnin;
        let mut moved = false;
        for _ in 0..updates {
            let accepted = mh_step_with_proposal(&mut state, &mut target, &proposal, rng)?;
            if accepted {
                current_ll = target.last_log_like;
                moved = true;
            }
            let stats = if in_burnin { &mut burnin } else { &mut sampling };
            stats.proposals += 1;
            stats.accepted += accepted as u64;
            if in_burnin {
                proposal.record(accepted, &config);
            }
        }
        if !in_burnin {
            trace.push(state.theta.clone(), moved, current_ll);
        }
    }
    // The target counts every solve; attribute them all to the sampling
    // bucket since per-phase attribution isn't needed for the baseline.
    sampling.forward_evaluations = target.evaluations;
    Ok((
        trace,
        RwmhStats {
            burnin,
            sampling,
            final_step_size: proposal.current_step_size().unwrap_or(f64::NAN),
        },
    ))
}
