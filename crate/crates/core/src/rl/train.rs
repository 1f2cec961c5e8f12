use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{beta_schedule, TrainConfig, TrainMode};
use super::ensemble::{net_input, polyak_blend, QEnsemble, SoftPolicy};
use super::update::{actor_update, critic_update, eval_q, CriticStats};
use crate::diagnostics::{pairwise_independence_ratio, pearson_matrix, spike_histogram_from_qvalues};
use crate::error::{invalid, Error, Result};
use crate::io::CsvTable;
use crate::nn::Batch;
use crate::rng::{derive_seed, rng_from_seed};
use crate::worlds::{argmax, sample_categorical, Dataset, GridWorld, QTable, Transition};

pub const METRICS_HEADER: [&str; 12] = [
    "step",
    "avg_return",
    "q_mean",
    "q_std",
    "bias_mean",
    "bias_std",
    "spike_count",
    "chi2_accept_ratio",
    "mean_abs_corr",
    "loss_q",
    "loss_spqr",
    "beta",
];

const EVAL_STREAM: u64 = 0x4556_414c;

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub step: u64,
    /// Exact expected return of the greedy policy on the evaluation Q.
    pub avg_return: f64,
    /// Mean member Q over every decision state and action.
    pub q_mean: f64,
    /// Across-member standard deviation, averaged over state-action pairs.
    pub q_std: f64,
    /// Normalized `ens_eval(Q) - Q*` over state-action pairs.
    pub bias_mean: f64,
    pub bias_std: f64,
    pub spike_count: usize,
    /// Pairwise independence acceptance ratio of member errors `Q_i - Q*`.
    pub chi2_accept_ratio: f64,
    pub mean_abs_corr: f64,
    /// Interval averages of the training losses; `beta` is the gain at the last update.
    pub loss_q: f64,
    pub loss_spqr: f64,
    pub beta: f64,
}

pub fn metrics_to_csv(metrics: &[RunMetrics]) -> String {
    let mut t = CsvTable::new(&METRICS_HEADER);
    for m in metrics {
        t.row_str(&[
            m.step.to_string(),
            crate::io::fmt_f64(m.avg_return),
            crate::io::fmt_f64(m.q_mean),
            crate::io::fmt_f64(m.q_std),
            crate::io::fmt_f64(m.bias_mean),
            crate::io::fmt_f64(m.bias_std),
            m.spike_count.to_string(),
            crate::io::fmt_f64(m.chi2_accept_ratio),
            crate::io::fmt_f64(m.mean_abs_corr),
            crate::io::fmt_f64(m.loss_q),
            crate::io::fmt_f64(m.loss_spqr),
            crate::io::fmt_f64(m.beta),
        ]);
    }
    t.into_string()
}

/// Why and when a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: u64,
    pub reason: String,
    pub last_losses: Option<CriticStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: Vec<RunMetrics>,
    pub ensemble: QEnsemble,
    pub policy: SoftPolicy,
    pub abort: Option<AbortRecord>,
}

#[derive(Default)]
struct Running {
    loss_q: f64,
    loss_reg: f64,
    count: usize,
}

impl Running {
    fn add(&mut self, s: &CriticStats) {
        self.loss_q += s.loss_q;
        self.loss_reg += s.loss_reg;
        self.count += 1;
    }

    fn take(&mut self) -> (f64, f64) {
        let c = self.count.max(1) as f64;
        let out = (self.loss_q / c, self.loss_reg / c);
        *self = Self::default();
        out
    }
}

/// Evaluates the ensemble on every decision state of `world` against the exact `qstar`.
pub fn evaluate(
    world: &GridWorld,
    ensemble: &QEnsemble,
    config: &TrainConfig,
    qstar: &QTable,
    step: u64,
) -> Result<RunMetrics> {
    let states = world.decision_states();
    let feats: Vec<Vec<f64>> = states.iter().map(|&s| net_input(&world.features(s))).collect();
    let batch = Batch::from_rows(&feats)?;
    let qs = ensemble.q_all(&batch)?;
    let ev = eval_q(ensemble, &batch, config)?;
    let n_actions = ensemble.n_actions();
    let n = ensemble.len();

    let mut actions = vec![0usize; world.n_states()];
    for (k, &s) in states.iter().enumerate() {
        actions[s] = argmax(&ev[k]);
    }
    let avg_return = world.policy_value(&actions)?;

    // one row per (state, action), one column per member
    let mut table = Vec::with_capacity(states.len() * n_actions);
    let mut errors = Vec::with_capacity(states.len() * n_actions);
    let mut bias = Vec::with_capacity(states.len() * n_actions);
    let mut star_sum = 0.0;
    for (k, &s) in states.iter().enumerate() {
        for a in 0..n_actions {
            let row: Vec<f64> = qs.iter().map(|q| q.get(k, a)).collect();
            let star = qstar.get(s, a);
            errors.push(row.iter().map(|q| q - star).collect::<Vec<f64>>());
            bias.push(ev[k][a] - star);
            star_sum += star;
            table.push(row);
        }
    }
    let pairs = table.len() as f64;
    let q_mean = table.iter().flatten().sum::<f64>() / (pairs * n as f64);
    let q_std = table
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / n as f64;
            (r.iter().map(|q| (q - m) * (q - m)).sum::<f64>() / n as f64).sqrt()
        })
        .sum::<f64>()
        / pairs;
    let norm = (star_sum / pairs).abs().max(1e-6);
    let bias_mean = bias.iter().sum::<f64>() / pairs / norm;
    let bias_std = (bias
        .iter()
        .map(|b| {
            let d = b / norm - bias_mean;
            d * d
        })
        .sum::<f64>()
        / pairs)
        .sqrt();

    let spike_count = if n >= 3 {
        spike_histogram_from_qvalues(&table, derive_seed(config.seed ^ EVAL_STREAM, step), 10)?.total_spikes
    } else {
        0
    };
    let (chi2_accept_ratio, mean_abs_corr) = if n >= 2 {
        let ratio = pairwise_independence_ratio(&errors, config.indep_bins, config.test_alpha)?;
        (ratio, pearson_matrix(&errors)?.mean_abs_off_diagonal())
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(RunMetrics {
        step,
        avg_return,
        q_mean,
        q_std,
        bias_mean,
        bias_std,
        spike_count,
        chi2_accept_ratio,
        mean_abs_corr,
        loss_q: 0.0,
        loss_spqr: 0.0,
        beta: 0.0,
    })
}

/// Runs the full training loop. Non-finite losses stop the run and are
/// reported in [`TrainOutput::abort`]; everything else is an error.
pub fn train(config: &TrainConfig, world: &GridWorld, dataset: Option<&Dataset>) -> Result<TrainOutput> {
    config.validate()?;
    world.validate()?;
    if config.mode == TrainMode::Offline && dataset.is_none_or(Dataset::is_empty) {
        return Err(invalid("offline training needs a nonempty dataset"));
    }
    let n_actions = GridWorld::N_ACTIONS;
    let mut ensemble = QEnsemble::new(config, 2, n_actions, derive_seed(config.seed, 1))?;
    let mut policy = SoftPolicy::new(config, 2, n_actions, derive_seed(config.seed, 2))?;
    let mut rng = rng_from_seed(derive_seed(config.seed, 3));
    let qstar = world.value_iteration(1e-10)?;

    let mut buffer: Vec<Transition> = match config.mode {
        TrainMode::Offline => dataset.map(|d| d.transitions.clone()).unwrap_or_default(),
        TrainMode::Online => Vec::with_capacity(config.buffer_capacity.min(1 << 16)),
    };
    let mut write_pos = 0usize;
    let mut state = world.sample_start(&mut rng);
    let mut episode_len = 0usize;
    let mut running = Running::default();
    let mut metrics = Vec::new();
    let mut last: Option<CriticStats> = None;

    for step in 0..config.total_steps {
        if config.mode == TrainMode::Online {
            let action = if step < config.start_steps {
                rng.random_range(0..n_actions)
            } else {
                let p = policy.probs_one(&net_input(&world.features(state)))?;
                sample_categorical(&p, &mut rng)
            };
            let (next, tr) = world.step_with(state, action, &mut rng);
            let done = tr.done;
            if buffer.len() < config.buffer_capacity {
                buffer.push(tr);
            } else {
                buffer[write_pos] = tr;
                write_pos = (write_pos + 1) % config.buffer_capacity;
            }
            episode_len += 1;
            if done || episode_len >= world.max_episode_steps {
                state = world.sample_start(&mut rng);
                episode_len = 0;
            } else {
                state = next;
            }
        }

        let ready = !buffer.is_empty() && (config.mode == TrainMode::Offline || buffer.len() >= config.batch_size);
        if ready {
            let mut batch = Vec::with_capacity(config.batch_size);
            let outcome: Result<()> = (|| {
                for _ in 0..config.utd {
                    batch.clear();
                    for _ in 0..config.batch_size {
                        batch.push(buffer[rng.random_range(0..buffer.len())].clone());
                    }
                    let stats = critic_update(&mut ensemble, &policy, &batch, config, step, &mut rng)?;
                    running.add(&stats);
                    last = Some(stats);
                    polyak_blend(&mut ensemble, config.tau);
                }
                actor_update(&mut policy, &ensemble, &batch, config)?;
                Ok(())
            })();
            match outcome {
                Ok(()) => {}
                Err(Error::NonFinite(what)) => {
                    return Ok(TrainOutput {
                        metrics,
                        ensemble,
                        policy,
                        abort: Some(AbortRecord {
                            step,
                            reason: format!("non-finite {what}"),
                            last_losses: last,
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
        }

        let done_steps = step + 1;
        if done_steps % config.eval_interval == 0 || done_steps == config.total_steps {
            let mut m = evaluate(world, &ensemble, config, &qstar, done_steps)?;
            let (lq, lr) = running.take();
            m.loss_q = lq;
            m.loss_spqr = lr;
            m.beta = beta_schedule(config, step);
            metrics.push(m);
        }
    }

    Ok(TrainOutput {
        metrics,
        ensemble,
        policy,
        abort: None,
    })
}
