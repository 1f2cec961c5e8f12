use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{beta_schedule, Regularizer, TrainConfig};
use super::ensemble::{bellman_target, ens_eval, ens_tar_with, gini_regularizer, net_input, softmax_in_place, QEnsemble, SoftPolicy};
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, Batch, MlpParams};
use crate::rng::{derive_seed, Rng};
use crate::spqr::spqr_loss_batch;
use crate::worlds::{sample_categorical, Transition};

/// Seed stream for the SPQR permutations, kept apart from the training RNG so
/// that enabling the regularizer never shifts the sampling sequence.
const SPQR_STREAM: u64 = 0x5350_5152;

/// Losses reported by one critic update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticStats {
    /// Mean over members of the per-member squared Bellman error.
    pub loss_q: f64,
    /// SPQR or Gini term before scaling by `beta`; 0 with no regularizer.
    pub loss_reg: f64,
    pub beta: f64,
    pub collapsed_rows: usize,
}

pub(crate) fn state_batches(batch: &[Transition]) -> (Batch, Batch) {
    let mut s = Batch::zeros(batch.len(), 2);
    let mut s2 = Batch::zeros(batch.len(), 2);
    for (r, t) in batch.iter().enumerate() {
        s.row_mut(r).copy_from_slice(&net_input(&t.s));
        s2.row_mut(r).copy_from_slice(&net_input(&t.s2));
    }
    (s, s2)
}

/// One gradient step for every critic toward the shared soft Bellman target,
/// optionally with the spectral or Gini regularizer at gain `beta(step)`.
pub fn critic_update(
    ensemble: &mut QEnsemble,
    policy: &SoftPolicy,
    batch: &[Transition],
    config: &TrainConfig,
    step: u64,
    rng: &mut Rng,
) -> Result<CriticStats> {
    if batch.is_empty() {
        return Err(invalid("critic update needs a nonempty batch"));
    }
    let n = ensemble.len();
    let b = batch.len();
    let (s, s2) = state_batches(batch);

    let probs2 = policy.probs(&s2)?;
    let mut next_actions = Vec::with_capacity(b);
    let mut logpi = Vec::with_capacity(b);
    for r in 0..b {
        let p = probs2.row(r);
        let a = sample_categorical(p, rng);
        next_actions.push(a);
        logpi.push(p[a].max(f64::MIN_POSITIVE).ln());
    }

    let tq = ensemble.target_all(&s2)?;
    let mut y = Vec::with_capacity(b);
    let mut vals = vec![0.0; n];
    for (r, t) in batch.iter().enumerate() {
        for (i, q) in tq.iter().enumerate() {
            vals[i] = q.get(r, next_actions[r]);
        }
        let tar = ens_tar_with(config.target_rule, &vals, config.subset_m, rng)?;
        y.push(bellman_target(t.r, t.done, config.gamma, config.alpha, tar, logpi[r]));
    }

    let beta = beta_schedule(config, step);
    let regularize = config.regularizer != Regularizer::None;
    let (loss_reg, collapsed_rows, reg_grad, caches2) = if regularize {
        let fwd: Vec<_> = ensemble
            .members
            .par_iter()
            .map(|m| m.forward(&s2))
            .collect::<Result<_>>()?;
        let qcur: Vec<Vec<f64>> = (0..b)
            .map(|r| fwd.iter().map(|(out, _)| out.get(r, next_actions[r])).collect())
            .collect();
        let (loss, collapsed, grads, gain) = match config.regularizer {
            Regularizer::Spqr => {
                let perm_seed = derive_seed(config.seed ^ SPQR_STREAM, ensemble.optim[0].step);
                let out = spqr_loss_batch(&qcur, config.rho, config.eps_soft, perm_seed)?;
                (out.loss, out.collapsed_rows, out.grads, beta)
            }
            Regularizer::Gini => {
                let mut total = 0.0;
                let mut grads = Vec::with_capacity(b);
                for row in &qcur {
                    let (l, g) = gini_regularizer(row)?;
                    total += l;
                    grads.push(g.into_iter().map(|x| x / b as f64).collect::<Vec<f64>>());
                }
                // diversity is rewarded: the Gini term enters with negative gain
                (total / b as f64, 0, grads, -beta)
            }
            Regularizer::None => unreachable!(),
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("regularizer loss".into()));
        }
        let scaled = if gain != 0.0 {
            Some(
                grads
                    .into_iter()
                    .map(|row| row.into_iter().map(|g| gain * g).collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        (loss, collapsed, scaled, Some(fwd))
    } else {
        (0.0, 0, None, None)
    };

    let losses: Vec<f64> = ensemble
        .members
        .par_iter_mut()
        .zip(ensemble.optim.par_iter_mut())
        .enumerate()
        .map(|(i, (member, optim))| {
            let (out, cache) = member.forward(&s)?;
            let mut dout = Batch::zeros(b, out.cols);
            let mut mse = 0.0;
            for (r, t) in batch.iter().enumerate() {
                let diff = out.get(r, t.a) - y[r];
                mse += diff * diff;
                dout.row_mut(r)[t.a] = 2.0 * diff / b as f64;
            }
            mse /= b as f64;
            if !mse.is_finite() {
                return Err(Error::NonFinite(format!("critic {i} loss")));
            }
            let (mut grads, _) = member.backward(&cache, &dout)?;
            if let (Some(rg), Some(fwd)) = (&reg_grad, &caches2) {
                let mut d2 = Batch::zeros(b, out.cols);
                for r in 0..b {
                    d2.row_mut(r)[next_actions[r]] = rg[r][i];
                }
                let (g2, _) = member.backward(&fwd[i].1, &d2)?;
                grads.axpy(1.0, &g2);
            }
            adam_step(member, &grads, optim)?;
            Ok(mse)
        })
        .collect::<Result<_>>()?;

    Ok(CriticStats {
        loss_q: losses.iter().sum::<f64>() / n as f64,
        loss_reg,
        beta,
        collapsed_rows,
    })
}

/// Aggregated Q per state row and action under the evaluation rule.
pub fn eval_q(ensemble: &QEnsemble, states: &Batch, config: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let qs = ensemble.q_all(states)?;
    let n_actions = ensemble.n_actions();
    let mut vals = vec![0.0; ensemble.len()];
    (0..states.rows)
        .map(|r| {
            (0..n_actions)
                .map(|a| {
                    for (i, q) in qs.iter().enumerate() {
                        vals[i] = q.get(r, a);
                    }
                    ens_eval(config.eval_rule, &vals)
                })
                .collect()
        })
        .collect()
}

/// Exact-expectation policy objective `mean_s sum_a pi(a|s) (alpha log pi(a|s) - q(s,a))`
/// and its parameter gradient for fixed action values `q`.
pub fn actor_loss_and_grad(policy: &SoftPolicy, states: &Batch, q: &[Vec<f64>]) -> Result<(f64, MlpParams)> {
    if q.len() != states.rows {
        return Err(Error::DimensionMismatch {
            expected: states.rows,
            got: q.len(),
        });
    }
    let (logits, cache) = policy.net.forward(states)?;
    let b = states.rows as f64;
    let mut dlogits = Batch::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for r in 0..logits.rows {
        let mut p = logits.row(r).to_vec();
        softmax_in_place(&mut p);
        let c: Vec<f64> = p
            .iter()
            .zip(&q[r])
            .map(|(pa, qa)| policy.alpha * pa.max(f64::MIN_POSITIVE).ln() - qa)
            .collect();
        let avg: f64 = p.iter().zip(&c).map(|(pa, ca)| pa * ca).sum();
        loss += avg;
        for (k, d) in dlogits.row_mut(r).iter_mut().enumerate() {
            *d = p[k] * (c[k] - avg) / b;
        }
    }
    let (grads, _) = policy.net.backward(&cache, &dlogits)?;
    Ok((loss / b, grads))
}

/// One policy step against the ensemble's evaluation values at the batch states.
pub fn actor_update(policy: &mut SoftPolicy, ensemble: &QEnsemble, batch: &[Transition], config: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("actor update needs a nonempty batch"));
    }
    let (s, _) = state_batches(batch);
    let q = eval_q(ensemble, &s, config)?;
    let (loss, grads) = actor_loss_and_grad(policy, &s, &q)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    adam_step(&mut policy.net, &grads, &mut policy.optim)?;
    Ok(loss)
}
