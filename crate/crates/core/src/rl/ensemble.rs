use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::{EvalRule, TargetRule, TrainConfig};
use crate::error::{invalid, Result};
use crate::nn::{AdamState, Batch, MlpParams};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// N critics with per-action output heads, their polyak targets and optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEnsemble {
    pub members: Vec<MlpParams>,
    pub targets: Vec<MlpParams>,
    pub optim: Vec<AdamState>,
}

impl QEnsemble {
    /// Member `i` is initialized from `derive_seed(seed, i)`; targets start as exact copies.
    pub fn new(config: &TrainConfig, state_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        let sizes = config.layer_sizes(state_dim, n_actions);
        let members = (0..config.n_ensemble)
            .map(|i| MlpParams::init(&sizes, config.activation, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let optim = members.iter().map(|m| AdamState::new(m, config.lr_q)).collect();
        Ok(Self {
            targets: members.clone(),
            members,
            optim,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_actions(&self) -> usize {
        self.members.first().map_or(0, MlpParams::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() || self.members.len() != self.targets.len() || self.members.len() != self.optim.len() {
            return Err(invalid("ensemble needs matching non-empty members, targets and optimizer states"));
        }
        for (m, t) in self.members.iter().zip(&self.targets) {
            m.validate()?;
            if !m.same_shape(&self.members[0]) || !m.same_shape(t) {
                return Err(invalid("ensemble members and targets must share one architecture"));
            }
        }
        Ok(())
    }

    /// Q-values of every member for every action: `out[i]` is `rows x |A|`.
    pub fn q_all(&self, states: &Batch) -> Result<Vec<Batch>> {
        self.members.iter().map(|m| m.predict(states)).collect()
    }

    pub fn target_all(&self, states: &Batch) -> Result<Vec<Batch>> {
        self.targets.iter().map(|m| m.predict(states)).collect()
    }
}

/// Categorical policy over `|A|` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPolicy {
    pub net: MlpParams,
    pub optim: AdamState,
    pub alpha: f64,
}

impl SoftPolicy {
    pub fn new(config: &TrainConfig, state_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        let net = MlpParams::init(&config.layer_sizes(state_dim, n_actions), config.activation, seed)?;
        let optim = AdamState::new(&net, config.lr_pi);
        Ok(Self {
            net,
            optim,
            alpha: config.alpha,
        })
    }

    /// Row-wise action probabilities.
    pub fn probs(&self, states: &Batch) -> Result<Batch> {
        let mut logits = self.net.predict(states)?;
        for r in 0..logits.rows {
            softmax_in_place(logits.row_mut(r));
        }
        Ok(logits)
    }

    pub fn probs_one(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.net.predict_one(state)?;
        softmax_in_place(&mut p);
        Ok(p)
    }
}

/// Network input for `[0,1]` cell features, centered to `[-1,1]`. With
/// non-negative inputs every untrained relu net is roughly proportional to
/// the input norm, which makes fresh ensemble members look correlated.
pub fn net_input(features: &[f64]) -> Vec<f64> {
    features.iter().map(|&f| 2.0 * f - 1.0).collect()
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Bellman-target aggregation across members. `subset_seed` only matters for
/// `redq_min_subset`.
pub fn ens_tar(rule: TargetRule, qvals: &[f64], subset_m: usize, subset_seed: u64) -> Result<f64> {
    ens_tar_with(rule, qvals, subset_m, &mut rng_from_seed(subset_seed))
}

pub(crate) fn ens_tar_with(rule: TargetRule, qvals: &[f64], subset_m: usize, rng: &mut Rng) -> Result<f64> {
    if qvals.is_empty() {
        return Err(invalid("ensemble aggregation needs at least one value"));
    }
    Ok(match rule {
        TargetRule::Mean => mean(qvals),
        TargetRule::Min => min(qvals),
        TargetRule::RedqMinSubset => {
            if !(1..=qvals.len()).contains(&subset_m) {
                return Err(invalid(format!("subset size {subset_m} not in [1, {}]", qvals.len())));
            }
            sample(rng, qvals.len(), subset_m)
                .iter()
                .map(|i| qvals[i])
                .fold(f64::INFINITY, f64::min)
        }
    })
}

/// Evaluation aggregation used by the actor and by greedy evaluation.
pub fn ens_eval(rule: EvalRule, qvals: &[f64]) -> Result<f64> {
    if qvals.is_empty() {
        return Err(invalid("ensemble aggregation needs at least one value"));
    }
    Ok(match rule {
        EvalRule::Mean => mean(qvals),
        EvalRule::Min => min(qvals),
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn min(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Soft Bellman target `r + (1 - done) * gamma * (tar_q - alpha * logpi_next)`.
pub fn bellman_target(r: f64, done: bool, gamma: f64, alpha: f64, tar_q: f64, logpi_next: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * (tar_q - alpha * logpi_next)
    }
}

/// `target <- tau * target + (1 - tau) * member` for every member.
pub fn polyak_update(ensemble: &mut QEnsemble, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid(format!("tau must be in (0, 1], got {tau}")));
    }
    polyak_blend(ensemble, tau);
    Ok(())
}

/// Unchecked blend; `tau = 0` copies members into targets.
pub fn polyak_blend(ensemble: &mut QEnsemble, tau: f64) {
    for (t, m) in ensemble.targets.iter_mut().zip(&ensemble.members) {
        for (tt, mt) in t.tensors_mut().zip(m.tensors()) {
            for (x, y) in tt.iter_mut().zip(mt) {
                *x = tau * *x + (1.0 - tau) * y;
            }
        }
    }
}

/// Normalized Gini dispersion of the member values and its subgradient.
pub fn gini_regularizer(qvals: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = qvals.len();
    if n < 2 {
        return Err(invalid("gini needs at least two values"));
    }
    let nf = n as f64;
    let scale = qvals.iter().map(|q| q.abs()).sum::<f64>() / nf + 1e-8;
    let mut total = 0.0;
    // half of dS/dq_k where S = sum_{i,j} |q_i - q_j|
    let mut ds = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let d = qvals[i] - qvals[j];
            total += d.abs();
            ds[i] += sign0(d);
        }
    }
    let denom = 2.0 * nf * nf * scale;
    let loss = total / denom;
    let grad = qvals
        .iter()
        .zip(&ds)
        .map(|(q, d)| 2.0 * d / denom - loss * sign0(*q) / (nf * scale))
        .collect();
    Ok((loss, grad))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
