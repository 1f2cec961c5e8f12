use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Mean,
    Min,
    RedqMinSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRule {
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant,
    LinearDecay,
    ExpDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    Spqr,
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Online,
    Offline,
}

/// Every knob of the ensemble Q-learning loop. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub gamma: f64,
    /// Entropy temperature.
    pub alpha: f64,
    pub n_ensemble: usize,
    pub target_rule: TargetRule,
    pub eval_rule: EvalRule,
    /// Subset size for `redq_min_subset`.
    pub subset_m: usize,
    pub regularizer: Regularizer,
    pub beta0: f64,
    pub beta_schedule: BetaSchedule,
    /// Step at which the schedule reaches its end value; defaults to `total_steps`.
    pub beta_end_step: Option<u64>,
    pub beta_decay_rate: f64,
    pub rho: f64,
    pub eps_soft: f64,
    /// Critic updates per training step.
    pub utd: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub total_steps: u64,
    /// Online only: uniformly random actions before this step.
    pub start_steps: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub buffer_capacity: usize,
    /// Bins per axis for the pairwise independence test in metrics.
    pub indep_bins: usize,
    pub test_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Online,
            gamma: 0.99,
            alpha: 1e-3,
            n_ensemble: 10,
            target_rule: TargetRule::Min,
            eval_rule: EvalRule::Min,
            subset_m: 2,
            regularizer: Regularizer::None,
            beta0: 0.0,
            beta_schedule: BetaSchedule::Constant,
            beta_end_step: None,
            beta_decay_rate: 0.1,
            rho: crate::spectral::DEFAULT_RHO,
            eps_soft: crate::spectral::DEFAULT_EPS,
            utd: 1,
            tau: 0.995,
            batch_size: 64,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            total_steps: 5000,
            start_steps: 500,
            eval_interval: 500,
            seed: 0,
            buffer_capacity: 100_000,
            indep_bins: 3,
            test_alpha: crate::diagnostics::DEFAULT_ALPHA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0) {
            return Err(invalid("alpha must be >= 0"));
        }
        if self.n_ensemble == 0 {
            return Err(invalid("n_ensemble must be >= 1"));
        }
        if self.target_rule == TargetRule::RedqMinSubset && !(1..=self.n_ensemble).contains(&self.subset_m) {
            return Err(invalid(format!("subset_m must be in [1, {}]", self.n_ensemble)));
        }
        match self.regularizer {
            Regularizer::Spqr if self.n_ensemble < 3 => {
                return Err(invalid("spqr regularization needs n_ensemble >= 3"));
            }
            Regularizer::Gini if self.n_ensemble < 2 => {
                return Err(invalid("gini regularization needs n_ensemble >= 2"));
            }
            _ => {}
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(invalid(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps_soft > 0.0) {
            return Err(invalid("need 0 < rho < 1 and eps_soft > 0"));
        }
        if self.utd == 0 || self.batch_size == 0 || self.eval_interval == 0 || self.buffer_capacity == 0 {
            return Err(invalid("utd, batch_size, eval_interval and buffer_capacity must be positive"));
        }
        if !(self.lr_q > 0.0) || !(self.lr_pi > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        if !(self.beta_decay_rate > 0.0) {
            return Err(invalid("beta_decay_rate must be positive"));
        }
        if self.indep_bins < 2 {
            return Err(invalid("indep_bins must be >= 2"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        sizes
    }
}

/// Regularization gain at `step`.
pub fn beta_schedule(config: &TrainConfig, step: u64) -> f64 {
    let end = config.beta_end_step.unwrap_or(config.total_steps).max(1) as f64;
    let t = step as f64;
    match config.beta_schedule {
        BetaSchedule::Constant => config.beta0,
        BetaSchedule::LinearDecay => config.beta0 * (1.0 - t / end).max(0.0),
        BetaSchedule::ExpDecay => config.beta0 * config.beta_decay_rate.powf(t / end),
    }
}
