//! Restart GP-UCB with constraints, plus the no-restart baseline and the
//! known-budget restart schedule.
//!
//! Each slot the learner:
//!
//! 1. resets both posteriors when the restart period elapses (`t mod W = 1`;
//!    a period of 1 resets every slot),
//! 2. forms confidence widths `beta = bound + R sqrt(2 log(1/delta) + 2 gain) / sqrt(lambda)`
//!    from the information gain accumulated since the last reset,
//! 3. scores every arm with the optimistic Lagrangian
//!    `z(x) = f_hat(x) - phi * g_hat(x)`, where `f_hat` adds the exploration
//!    bonus and `g_hat` subtracts it (optimism pushes the constraint estimate
//!    toward feasibility),
//! 4. plays the argmax (lowest index on ties), observes the noisy reward and
//!    constraint, conditions both posteriors, and
//! 5. ascends the dual: `phi <- Proj_[0, rho] (phi + eta * g_hat(x_t))`.
//!
//! The dual variable is *not* reset at restarts; only the posteriors are.
//!
//! Restart periods come from [`restart_period`]: `W = gain^{1/4} sqrt(T)`
//! without budget knowledge, shrunk by `budget^{-1/2}` when the total
//! variation budget is known, or the full horizon for the no-restart
//! baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::BeamCodebook;
use crate::gp::{GpError, PosteriorState, ProbeCache};
use crate::kernels::KernelSpec;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty codebook")]
    EmptyCodebook,

    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Errors from one bandit step; observation failures leave the state untouched.
#[derive(Debug, Error)]
pub enum StepError<E: std::fmt::Display> {
    #[error("observation failed: {0}")]
    Observation(E),

    #[error("non-finite observation: reward {reward}, cost {cost}")]
    NonFinite { reward: f64, cost: f64 },

    #[error(transparent)]
    Bandit(#[from] BanditError),
}

/// What feeds the confidence width during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Realized information gain of the points observed since the last reset.
    Realized,
    /// Squared-exponential growth rate `(log t)^{d+1}` with unit constant.
    TheoreticalSe,
}

/// How the restart period is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum RestartSchedule {
    UnknownBudget,
    KnownBudget { variation_budget: f64 },
    NoRestart,
}

/// Whether the bound projection applies to the mean alone or to the whole
/// optimistic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionScope {
    MeanOnly,
    FullEstimate,
}

/// All learner hyperparameters. The environment-derived scalars (`B`, `G`,
/// `tau`) are everything the learner is told about the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub horizon: usize,
    /// Reward bound B.
    pub reward_bound: f64,
    /// Constraint bound G.
    pub constraint_bound: f64,
    /// Slater margin tau.
    pub slater_margin: f64,
    /// Dual projection cap rho (>= 4B/tau).
    pub dual_cap: f64,
    /// Dual ascent step eta.
    pub dual_step: f64,
    /// Confidence level delta.
    pub confidence: f64,
    /// Sub-Gaussian noise parameter R.
    pub noise_level: f64,
    /// GP regularizer lambda.
    pub regularizer: f64,
    /// Restart period W.
    pub restart_period: usize,
    pub gamma_mode: GammaMode,
    pub schedule: RestartSchedule,
    pub projection: ProjectionScope,
    pub reward_kernel: KernelSpec,
    pub constraint_kernel: KernelSpec,
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), BanditError> {
        let err = |msg: String| Err(BanditError::InvalidConfig(msg));
        if self.horizon == 0 {
            return err("horizon must be >= 1".into());
        }
        for (name, v) in [
            ("reward bound", self.reward_bound),
            ("constraint bound", self.constraint_bound),
            ("Slater margin", self.slater_margin),
            ("dual step", self.dual_step),
            ("noise level", self.noise_level),
            ("regularizer", self.regularizer),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let dual_floor = 4.0 * self.reward_bound / self.slater_margin;
        if !(self.dual_cap >= dual_floor) {
            return err(format!(
                "dual cap {} below 4B/tau = {dual_floor}",
                self.dual_cap
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return err(format!("confidence must be in (0, 1), got {}", self.confidence));
        }
        if self.restart_period < 1 || self.restart_period > self.horizon {
            return err(format!(
                "restart period {} outside [1, {}]",
                self.restart_period, self.horizon
            ));
        }
        if let RestartSchedule::KnownBudget { variation_budget } = self.schedule {
            if !(variation_budget > 0.0) {
                return err(format!("variation budget must be positive, got {variation_budget}"));
            }
        }
        if self.reward_kernel.input_dim() != self.constraint_kernel.input_dim() {
            return err("reward and constraint kernels disagree on input dimension".into());
        }
        Ok(())
    }
}

/// Restart period for a horizon and an up-front information-gain estimate.
pub fn restart_period(
    horizon: usize,
    gamma_hat: f64,
    schedule: &RestartSchedule,
) -> Result<usize, BanditError> {
    if horizon == 0 {
        return Err(BanditError::InvalidConfig("horizon must be >= 1".into()));
    }
    if !(gamma_hat > 0.0) || !gamma_hat.is_finite() {
        return Err(BanditError::InvalidConfig(format!(
            "gamma estimate must be positive and finite, got {gamma_hat}"
        )));
    }
    let base = gamma_hat.powf(0.25) * (horizon as f64).sqrt();
    let raw = match schedule {
        RestartSchedule::UnknownBudget => base,
        RestartSchedule::KnownBudget { variation_budget } => {
            if !(*variation_budget > 0.0) || !variation_budget.is_finite() {
                return Err(BanditError::InvalidConfig(format!(
                    "variation budget must be positive and finite, got {variation_budget}"
                )));
            }
            base / variation_budget.sqrt()
        }
        RestartSchedule::NoRestart => return Ok(horizon),
    };
    Ok((raw.round() as usize).clamp(1, horizon))
}

/// Confidence width `bound + R sqrt(2 log(1/delta) + 2 info_gain) / sqrt(lambda)`.
pub fn beta(
    bound: f64,
    noise_level: f64,
    regularizer: f64,
    confidence: f64,
    info_gain: f64,
) -> Result<f64, BanditError> {
    for (name, v) in [("bound", bound), ("noise level", noise_level), ("regularizer", regularizer)]
    {
        if !(v > 0.0) || !v.is_finite() {
            return Err(BanditError::InvalidConfig(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(BanditError::InvalidConfig(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    if !(info_gain >= 0.0) || !info_gain.is_finite() {
        return Err(BanditError::InvalidConfig(format!(
            "information gain must be >= 0 and finite, got {info_gain}"
        )));
    }
    Ok(bound
        + noise_level * (2.0 * (1.0 / confidence).ln() + 2.0 * info_gain).sqrt()
            / regularizer.sqrt())
}

/// `(log t)^{d+1}` with unit constant; the squared-exponential gain rate.
pub fn theoretical_se_info_gain(t: usize, input_dim: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    (t as f64).ln().powi(input_dim as i32 + 1)
}

/// `Proj_[0, rho] (phi + eta * g)`.
pub fn project_dual(phi: f64, eta: f64, g_at_chosen: f64, rho: f64) -> f64 {
    (phi + eta * g_at_chosen).clamp(0.0, rho)
}

/// Lowest index attaining the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One slot's choice plus the diagnostics behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub arm_index: usize,
    /// Lagrangian scores `z(x)` over the codebook.
    pub scores: Vec<f64>,
    /// Optimistic reward estimates `f_hat`.
    pub reward_ucb: Vec<f64>,
    /// Optimistic constraint estimates `g_hat`.
    pub constraint_lcb: Vec<f64>,
    pub beta_reward: f64,
    pub beta_constraint: f64,
    /// Dual variable the scores were formed with.
    pub dual: f64,
}

/// Result of a completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub decision: Decision,
    pub reward: f64,
    pub cost: f64,
}

/// Full learner state, bound to the codebook it plays over. Owned by exactly
/// one run; independent runs can execute in parallel with no shared mutable
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    config: BanditConfig,
    arm_features: Vec<Vec<f64>>,
    reward_post: PosteriorState,
    constraint_post: PosteriorState,
    reward_cache: ProbeCache,
    constraint_cache: ProbeCache,
    dual: f64,
    /// Slot about to be played, 1-based.
    t: usize,
    restart_anchor: usize,
}

impl BanditState {
    pub fn new(config: BanditConfig, codebook: &BeamCodebook) -> Result<Self, BanditError> {
        config.validate()?;
        if codebook.is_empty() {
            return Err(BanditError::EmptyCodebook);
        }
        if config.reward_kernel.input_dim() != codebook.feature_dim() {
            return Err(BanditError::InvalidConfig(format!(
                "kernel input dimension {} does not match codebook feature dimension {}",
                config.reward_kernel.input_dim(),
                codebook.feature_dim()
            )));
        }
        let arm_features = codebook.features().to_vec();
        let reward_post = PosteriorState::new(config.reward_kernel, config.regularizer)?;
        let constraint_post = PosteriorState::new(config.constraint_kernel, config.regularizer)?;
        let reward_cache = ProbeCache::new(&reward_post, arm_features.clone())?;
        let constraint_cache = ProbeCache::new(&constraint_post, arm_features.clone())?;
        Ok(Self {
            config,
            arm_features,
            reward_post,
            constraint_post,
            reward_cache,
            constraint_cache,
            dual: 0.0,
            t: 1,
            restart_anchor: 1,
        })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn n_arms(&self) -> usize {
        self.arm_features.len()
    }

    pub fn reward_posterior(&self) -> &PosteriorState {
        &self.reward_post
    }

    pub fn constraint_posterior(&self) -> &PosteriorState {
        &self.constraint_post
    }

    /// Current dual variable, in `[0, rho]`.
    pub fn dual(&self) -> f64 {
        self.dual
    }

    /// Slot about to be played (1-based).
    pub fn current_slot(&self) -> usize {
        self.t
    }

    /// Slot of the last restart.
    pub fn restart_anchor(&self) -> usize {
        self.restart_anchor
    }

    /// Whether the current slot triggers a restart (`t mod W = 1`, with a
    /// period of 1 restarting every slot).
    pub fn restart_due(&self) -> bool {
        self.config.restart_period == 1 || self.t % self.config.restart_period == 1
    }

    /// Discard both posteriors and re-anchor. The dual variable persists.
    pub fn restart(&mut self) {
        self.reward_post = PosteriorState::new(self.config.reward_kernel, self.config.regularizer)
            .expect("config was validated");
        self.constraint_post =
            PosteriorState::new(self.config.constraint_kernel, self.config.regularizer)
                .expect("config was validated");
        self.reward_cache.sync(&self.reward_post);
        self.constraint_cache.sync(&self.constraint_post);
        self.restart_anchor = self.t;
    }

    fn gamma_value(&self, post: &PosteriorState) -> f64 {
        match self.config.gamma_mode {
            GammaMode::Realized => post.info_gain(),
            GammaMode::TheoreticalSe => {
                theoretical_se_info_gain(post.len(), post.kernel().input_dim())
            }
        }
    }

    fn score_arms(
        &self,
        predict_reward: impl Fn(usize) -> (f64, f64),
        predict_constraint: impl Fn(usize) -> (f64, f64),
        reward_gain: f64,
        constraint_gain: f64,
    ) -> Result<Decision, BanditError> {
        let cfg = &self.config;
        let beta_reward = beta(
            cfg.reward_bound,
            cfg.noise_level,
            cfg.regularizer,
            cfg.confidence,
            reward_gain,
        )?;
        let beta_constraint = beta(
            cfg.constraint_bound,
            cfg.noise_level,
            cfg.regularizer,
            cfg.confidence,
            constraint_gain,
        )?;
        let n = self.arm_features.len();
        let mut scores = Vec::with_capacity(n);
        let mut reward_ucb = Vec::with_capacity(n);
        let mut constraint_lcb = Vec::with_capacity(n);
        for arm in 0..n {
            let (mu, var) = predict_reward(arm);
            let (mu_c, var_c) = predict_constraint(arm);
            let sigma = var.sqrt();
            let sigma_c = var_c.sqrt();
            let (f_hat, g_hat) = match cfg.projection {
                ProjectionScope::MeanOnly => (
                    mu.clamp(-cfg.reward_bound, cfg.reward_bound) + beta_reward * sigma,
                    mu_c.clamp(-cfg.constraint_bound, cfg.constraint_bound)
                        - beta_constraint * sigma_c,
                ),
                ProjectionScope::FullEstimate => (
                    (mu + beta_reward * sigma).clamp(-cfg.reward_bound, cfg.reward_bound),
                    (mu_c - beta_constraint * sigma_c)
                        .clamp(-cfg.constraint_bound, cfg.constraint_bound),
                ),
            };
            scores.push(f_hat - self.dual * g_hat);
            reward_ucb.push(f_hat);
            constraint_lcb.push(g_hat);
        }
        Ok(Decision {
            arm_index: argmax(&scores),
            scores,
            reward_ucb,
            constraint_lcb,
            beta_reward,
            beta_constraint,
            dual: self.dual,
        })
    }

    /// Score every arm from the current posteriors and the current dual.
    pub fn acquisition(&self) -> Result<Decision, BanditError> {
        self.score_arms(
            |arm| self.reward_cache.predict(arm),
            |arm| self.constraint_cache.predict(arm),
            self.gamma_value(&self.reward_post),
            self.gamma_value(&self.constraint_post),
        )
    }

    /// Acquisition of the reset state: prior mean 0, prior variance, zero
    /// information gain, current dual.
    fn acquisition_cold(&self) -> Result<Decision, BanditError> {
        self.score_arms(
            |arm| (0.0, self.reward_cache.prior_variance(arm)),
            |arm| (0.0, self.constraint_cache.prior_variance(arm)),
            0.0,
            0.0,
        )
    }

    /// `Proj_[0, rho] (phi + eta * g_hat(x_t))` for the current dual.
    pub fn dual_update(&self, g_hat_at_chosen: f64) -> f64 {
        project_dual(self.dual, self.config.dual_step, g_hat_at_chosen, self.config.dual_cap)
    }

    /// Condition both posteriors on the observation of the decision's arm,
    /// ascend the dual, and advance the clock.
    pub fn apply_observation(
        &mut self,
        decision: &Decision,
        reward: f64,
        cost: f64,
    ) -> Result<(), BanditError> {
        let x = &self.arm_features[decision.arm_index];
        self.reward_post.update(x, reward)?;
        self.constraint_post.update(x, cost)?;
        self.reward_cache.sync(&self.reward_post);
        self.constraint_cache.sync(&self.constraint_post);
        self.dual = self.dual_update(decision.constraint_lcb[decision.arm_index]);
        self.t += 1;
        Ok(())
    }

    /// Run one full slot: restart check, acquisition, observation, update.
    ///
    /// The restart and all state mutation are deferred until the observation
    /// callback has succeeded, so a failing callback leaves the state
    /// untouched.
    pub fn step<E: std::fmt::Display>(
        &mut self,
        observe: impl FnOnce(usize) -> Result<(f64, f64), E>,
    ) -> Result<StepOutcome, StepError<E>> {
        let due = self.restart_due();
        let decision =
            if due { self.acquisition_cold()? } else { self.acquisition()? };
        let (reward, cost) = observe(decision.arm_index).map_err(StepError::Observation)?;
        if !reward.is_finite() || !cost.is_finite() {
            return Err(StepError::NonFinite { reward, cost });
        }
        if due {
            self.restart();
        }
        self.apply_observation(&decision, reward, cost)?;
        Ok(StepOutcome { decision, reward, cost })
    }
}
