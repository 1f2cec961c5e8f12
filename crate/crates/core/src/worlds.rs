//! Toy MDPs with exact dynamic-programming oracles, behavior datasets and
//! Monte-Carlo return estimates.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// One possible result of taking an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub done: bool,
}

/// Finite MDP given by explicit outcome lists `outcomes[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub outcomes: Vec<Vec<Vec<Outcome>>>,
}

/// State-action values, row-major `[state][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index maximizer.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

const MAX_SWEEPS: usize = 1_000_000;

impl TabularMdp {
    fn backup(&self, q: &QTable, s: usize, a: usize, gamma: f64) -> f64 {
        self.outcomes[s][a]
            .iter()
            .map(|o| {
                let cont = if o.done { 0.0 } else { gamma * q.max(o.next) };
                o.prob * (o.reward + cont)
            })
            .sum()
    }

    /// Sup-norm Bellman residual of `q` under the optimality operator.
    pub fn bellman_residual(&self, q: &QTable, gamma: f64) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                worst = worst.max((self.backup(q, s, a, gamma) - q.get(s, a)).abs());
            }
        }
        worst
    }

    /// Optimal Q-values; iterates until the sup-norm residual is below `tol`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> Result<QTable> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(format!("gamma must be in [0, 1), got {gamma}")));
        }
        let mut q = QTable::zeros(self.n_states, self.n_actions);
        for _ in 0..MAX_SWEEPS {
            let mut next = q.clone();
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    next.values[s * self.n_actions + a] = self.backup(&q, s, a, gamma);
                }
            }
            q = next;
            if self.bellman_residual(&q, gamma) < tol {
                return Ok(q);
            }
        }
        Err(Error::NoConvergence(MAX_SWEEPS))
    }

    /// Q-values of a stochastic policy `probs[s][a]`.
    pub fn policy_q(&self, probs: &[Vec<f64>], gamma: f64, tol: f64) -> Result<QTable> {
        if probs.len() != self.n_states {
            return Err(Error::DimensionMismatch {
                expected: self.n_states,
                got: probs.len(),
            });
        }
        let v_of = |q: &QTable, s: usize| -> f64 {
            probs[s].iter().enumerate().map(|(a, p)| p * q.get(s, a)).sum()
        };
        let mut q = QTable::zeros(self.n_states, self.n_actions);
        for _ in 0..MAX_SWEEPS {
            let mut next = q.clone();
            let mut delta = 0.0f64;
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let val: f64 = self.outcomes[s][a]
                        .iter()
                        .map(|o| {
                            let cont = if o.done { 0.0 } else { gamma * v_of(&q, o.next) };
                            o.prob * (o.reward + cont)
                        })
                        .sum();
                    delta = delta.max((val - q.get(s, a)).abs());
                    next.values[s * self.n_actions + a] = val;
                }
            }
            q = next;
            if delta < tol * (1.0 - gamma) {
                return Ok(q);
            }
        }
        Err(Error::NoConvergence(MAX_SWEEPS))
    }
}

pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

/// Grid world with four moves. Entering a goal cell pays `goal_reward` and
/// ends the episode; every other move pays `step_reward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<(usize, usize)>,
    pub starts: Vec<(usize, usize)>,
    pub goals: Vec<(usize, usize)>,
    pub goal_reward: f64,
    pub step_reward: f64,
    pub p_slip: f64,
    pub gamma: f64,
    pub max_episode_steps: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            walls: Vec::new(),
            starts: vec![(0, 0)],
            goals: vec![(4, 4)],
            goal_reward: 1.0,
            step_reward: 0.0,
            p_slip: 0.1,
            gamma: 0.99,
            max_episode_steps: 100,
        }
    }
}

/// One environment transition with normalized coordinate features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: [f64; 2],
    pub a: usize,
    pub r: f64,
    pub s2: [f64; 2],
    pub done: bool,
}

impl GridWorld {
    pub const N_ACTIONS: usize = 4;

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn n_actions(&self) -> usize {
        Self::N_ACTIONS
    }

    #[inline]
    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_wall(&self, s: usize) -> bool {
        self.walls.contains(&self.cell(s))
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goals.contains(&self.cell(s))
    }

    /// Cells the agent can act from.
    pub fn is_decision_state(&self, s: usize) -> bool {
        !self.is_wall(s) && !self.is_goal(s)
    }

    pub fn decision_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| self.is_decision_state(s)).collect()
    }

    pub fn start_states(&self) -> Vec<usize> {
        self.starts.iter().map(|&(x, y)| self.index(x, y)).collect()
    }

    pub fn features(&self, s: usize) -> [f64; 2] {
        let (x, y) = self.cell(s);
        let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        [norm(x, self.width), norm(y, self.height)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("grid must be at least 1x1"));
        }
        if !(0.0..1.0).contains(&self.p_slip) {
            return Err(invalid(format!("p_slip must be in [0, 1), got {}", self.p_slip)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        let inside = |&(x, y): &(usize, usize)| x < self.width && y < self.height;
        if !self.walls.iter().all(inside) || !self.goals.iter().all(inside) || !self.starts.iter().all(inside) {
            return Err(invalid("cell coordinates outside the grid"));
        }
        if self.goals.is_empty() || self.starts.is_empty() {
            return Err(invalid("need at least one goal and one start cell"));
        }
        if self.max_episode_steps == 0 {
            return Err(invalid("max_episode_steps must be positive"));
        }
        for &s in &self.start_states() {
            if !self.is_decision_state(s) {
                return Err(invalid("start cells must be open, non-goal cells"));
            }
        }
        // reverse breadth-first search from the goals over deterministic moves
        let mut reach = vec![false; self.n_states()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for s in 0..self.n_states() {
            if self.is_goal(s) && !self.is_wall(s) {
                reach[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(t) = queue.pop_front() {
            for s in 0..self.n_states() {
                if reach[s] || !self.is_decision_state(s) {
                    continue;
                }
                if (0..Self::N_ACTIONS).any(|a| self.move_to(s, a) == t) {
                    reach[s] = true;
                    queue.push_back(s);
                }
            }
        }
        if let Some(s) = (0..self.n_states()).find(|&s| !self.is_wall(s) && !reach[s]) {
            return Err(invalid(format!("goal unreachable from cell {:?}", self.cell(s))));
        }
        Ok(())
    }

    /// Deterministic move; walls and borders leave the agent in place.
    pub fn move_to(&self, s: usize, a: usize) -> usize {
        let (x, y) = self.cell(s);
        let (nx, ny) = match a {
            0 if y > 0 => (x, y - 1),
            1 if y + 1 < self.height => (x, y + 1),
            2 if x > 0 => (x - 1, y),
            3 if x + 1 < self.width => (x + 1, y),
            _ => (x, y),
        };
        let t = self.index(nx, ny);
        if self.is_wall(t) {
            s
        } else {
            t
        }
    }

    fn perpendicular(a: usize) -> [usize; 2] {
        if a < 2 {
            [2, 3]
        } else {
            [0, 1]
        }
    }

    /// Intended action with probability `1 - p_slip`, otherwise one of the two
    /// perpendicular moves.
    pub fn action_outcomes(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let mut out = vec![(self.move_to(s, a), 1.0 - self.p_slip)];
        if self.p_slip > 0.0 {
            for b in Self::perpendicular(a) {
                out.push((self.move_to(s, b), self.p_slip / 2.0));
            }
        }
        out
    }

    fn reward_done(&self, next: usize) -> (f64, bool) {
        if self.is_goal(next) {
            (self.goal_reward, true)
        } else {
            (self.step_reward, false)
        }
    }

    pub fn to_mdp(&self) -> TabularMdp {
        let n = self.n_states();
        let mut outcomes = vec![vec![Vec::new(); Self::N_ACTIONS]; n];
        for (s, row) in outcomes.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                if !self.is_decision_state(s) {
                    // absorbing with zero reward
                    *cell = vec![Outcome {
                        next: s,
                        prob: 1.0,
                        reward: 0.0,
                        done: true,
                    }];
                    continue;
                }
                *cell = self
                    .action_outcomes(s, a)
                    .into_iter()
                    .map(|(next, prob)| {
                        let (reward, done) = self.reward_done(next);
                        Outcome {
                            next,
                            prob,
                            reward,
                            done,
                        }
                    })
                    .collect();
            }
        }
        TabularMdp {
            n_states: n,
            n_actions: Self::N_ACTIONS,
            outcomes,
        }
    }

    pub fn value_iteration(&self, tol: f64) -> Result<QTable> {
        self.validate()?;
        self.to_mdp().value_iteration(self.gamma, tol)
    }

    /// Expected discounted return of a deterministic policy, averaged over the
    /// start cells.
    pub fn policy_value(&self, actions: &[usize]) -> Result<f64> {
        let probs: Vec<Vec<f64>> = actions
            .iter()
            .map(|&a| {
                let mut p = vec![0.0; Self::N_ACTIONS];
                p[a.min(Self::N_ACTIONS - 1)] = 1.0;
                p
            })
            .collect();
        self.stochastic_policy_value(&probs)
    }

    pub fn stochastic_policy_value(&self, probs: &[Vec<f64>]) -> Result<f64> {
        let q = self.to_mdp().policy_q(probs, self.gamma, 1e-10)?;
        let starts = self.start_states();
        let total: f64 = starts
            .iter()
            .map(|&s| probs[s].iter().enumerate().map(|(a, p)| p * q.get(s, a)).sum::<f64>())
            .sum();
        Ok(total / starts.len() as f64)
    }

    /// Optimal expected discounted return from the start cells.
    pub fn optimal_value(&self) -> Result<f64> {
        let q = self.value_iteration(1e-10)?;
        let starts = self.start_states();
        Ok(starts.iter().map(|&s| q.max(s)).sum::<f64>() / starts.len() as f64)
    }

    pub fn sample_start(&self, rng: &mut Rng) -> usize {
        let starts = self.start_states();
        starts[rng.random_range(0..starts.len())]
    }

    /// Samples the next cell with an explicit generator.
    pub fn step_with(&self, s: usize, a: usize, rng: &mut Rng) -> (usize, Transition) {
        let mut taken = a;
        if self.p_slip > 0.0 && rng.random::<f64>() < self.p_slip {
            taken = Self::perpendicular(a)[usize::from(rng.random::<bool>())];
        }
        let next = self.move_to(s, taken);
        let (r, done) = self.reward_done(next);
        (
            next,
            Transition {
                s: self.features(s),
                a,
                r,
                s2: self.features(next),
                done,
            },
        )
    }

    /// Pure single step: the outcome is a function of `(s, a, seed)`.
    pub fn step(&self, s: usize, a: usize, seed: u64) -> (usize, Transition) {
        self.step_with(s, a, &mut rng_from_seed(seed))
    }

    pub fn state_of_features(&self, f: [f64; 2]) -> usize {
        let inv = |v: f64, n: usize| if n > 1 { (v * (n - 1) as f64).round() as usize } else { 0 };
        self.index(inv(f[0], self.width), inv(f[1], self.height))
    }
}

/// Anything that yields action probabilities for a grid cell.
pub trait StatePolicy: Sync {
    fn probs(&self, s: usize) -> Vec<f64>;
}

/// Greedy on a Q-table, mixed with uniform exploration `epsilon`.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<'a> {
    pub q: &'a QTable,
    pub epsilon: f64,
}

impl StatePolicy for EpsilonGreedy<'_> {
    fn probs(&self, s: usize) -> Vec<f64> {
        let n = self.q.n_actions;
        let mut p = vec![self.epsilon / n as f64; n];
        p[self.q.greedy(s)] += 1.0 - self.epsilon;
        p
    }
}

pub struct UniformPolicy {
    pub n_actions: usize,
}

impl StatePolicy for UniformPolicy {
    fn probs(&self, _s: usize) -> Vec<f64> {
        vec![1.0 / self.n_actions as f64; self.n_actions]
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    Medium,
    Expert,
    Replay,
}

/// Header line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    pub seed: u64,
    pub size: usize,
    /// Exploration rates of the behavior policies, in generation order.
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

pub const EXPERT_EPSILON: f64 = 0.05;
pub const REPLAY_EPSILONS: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.05];

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// JSON-lines: metadata header followed by one transition per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for t in &self.transitions {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| invalid("empty dataset file"))?;
        let meta: DatasetMeta = serde_json::from_str(header)?;
        let transitions = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<Transition>, _>>()?;
        if transitions.is_empty() {
            return Err(invalid("dataset has no transitions"));
        }
        Ok(Self { meta, transitions })
    }
}

/// Rolls out `policy` from the start cells until `size` transitions exist.
pub fn rollout_transitions(world: &GridWorld, policy: &dyn StatePolicy, size: usize, rng: &mut Rng) -> Vec<Transition> {
    let mut out = Vec::with_capacity(size);
    let mut s = world.sample_start(rng);
    let mut t = 0;
    while out.len() < size {
        let a = sample_categorical(&policy.probs(s), rng);
        let (next, tr) = world.step_with(s, a, rng);
        let done = tr.done;
        out.push(tr);
        t += 1;
        if done || t >= world.max_episode_steps {
            s = world.sample_start(rng);
            t = 0;
        } else {
            s = next;
        }
    }
    out
}

/// Exploration rate whose epsilon-greedy policy earns about a third of the
/// expert's return. Bisection on the exact policy value; clamps to 1.
pub fn medium_epsilon(world: &GridWorld, qstar: &QTable) -> Result<f64> {
    let value = |eps: f64| -> Result<f64> {
        let pol = EpsilonGreedy { q: qstar, epsilon: eps };
        let probs: Vec<Vec<f64>> = (0..world.n_states()).map(|s| pol.probs(s)).collect();
        world.stochastic_policy_value(&probs)
    };
    let target = value(EXPERT_EPSILON)? / 3.0;
    if value(1.0)? >= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (EXPERT_EPSILON, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if value(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn generate_dataset(world: &GridWorld, provenance: Provenance, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(invalid("dataset size must be >= 1"));
    }
    world.validate()?;
    let mut rng = rng_from_seed(seed);
    let qstar = world.value_iteration(1e-10)?;
    let (transitions, epsilons) = match provenance {
        Provenance::Random => {
            let pol = UniformPolicy { n_actions: world.n_actions() };
            (rollout_transitions(world, &pol, size, &mut rng), vec![1.0])
        }
        Provenance::Expert => {
            let pol = EpsilonGreedy { q: &qstar, epsilon: EXPERT_EPSILON };
            (rollout_transitions(world, &pol, size, &mut rng), vec![EXPERT_EPSILON])
        }
        Provenance::Medium => {
            let eps = medium_epsilon(world, &qstar)?;
            let pol = EpsilonGreedy { q: &qstar, epsilon: eps };
            (rollout_transitions(world, &pol, size, &mut rng), vec![eps])
        }
        Provenance::Replay => {
            let k = REPLAY_EPSILONS.len();
            let mut all = Vec::with_capacity(size);
            for (i, &eps) in REPLAY_EPSILONS.iter().enumerate() {
                let chunk = size / k + usize::from(i < size % k);
                if chunk == 0 {
                    continue;
                }
                let pol = EpsilonGreedy { q: &qstar, epsilon: eps };
                all.extend(rollout_transitions(world, &pol, chunk, &mut rng));
            }
            (all, REPLAY_EPSILONS.to_vec())
        }
    };
    Ok(Dataset {
        meta: DatasetMeta {
            provenance,
            seed,
            size,
            epsilons,
        },
        transitions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation of the per-rollout returns.
    pub std: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn std_error(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Discounted return of `(s, a)` followed by `policy`, averaged over rollouts.
pub fn mc_return(
    world: &GridWorld,
    policy: &dyn StatePolicy,
    s: usize,
    a: usize,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_rollouts == 0 {
        return Err(invalid("need at least one rollout"));
    }
    let returns: Vec<f64> = (0..n_rollouts)
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, k as u64));
            let mut state = s;
            let mut action = a;
            let mut total = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let (next, tr) = world.step_with(state, action, &mut rng);
                total += disc * tr.r;
                if tr.done {
                    break;
                }
                disc *= world.gamma;
                state = next;
                action = sample_categorical(&policy.probs(state), &mut rng);
            }
            total
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std: var.sqrt(),
        n: returns.len(),
    })
}

/// Horizon with `gamma^h < 1e-4`.
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((1e-4f64).ln() / gamma.ln()).ceil() as usize + 1
}
