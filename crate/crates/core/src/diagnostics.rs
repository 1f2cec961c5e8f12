//! Statistical evidence for (in)dependence of ensemble members: chi-square
//! tests, correlation matrices, spike histograms, bias statistics and the
//! spiked-model detection experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::eigen::eigvalsh_spectrum;
use crate::error::{invalid, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::rng::derive_seed;
use crate::spectral::{kl_to_semicircle, sample_spiked_wishart, Histogram, SpikedModelParams, DEFAULT_EPS, DEFAULT_RHO};
use crate::nn::{Batch, MlpParams};
use crate::rl::{ens_eval, net_input, EvalRule};
use crate::spqr::{q_spectrum, DEFAULT_SIGMA_FLOOR};
use crate::worlds::{default_horizon, mc_return, GridWorld, StatePolicy};

/// Significance level used throughout the independence experiments.
pub const DEFAULT_ALPHA: f64 = 0.025;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub accept: bool,
    /// Input had no spread (or too few categories); the null is rejected.
    pub degenerate: bool,
    /// Expected counts fall below the classical validity rule.
    pub low_counts: bool,
}

impl TestReport {
    fn degenerate(alpha: f64, dof: usize) -> Self {
        Self {
            statistic: f64::INFINITY,
            dof: dof.max(1),
            p_value: 0.0,
            alpha,
            accept: false,
            degenerate: true,
            low_counts: false,
        }
    }

    fn from_statistic(statistic: f64, dof: usize, alpha: f64, low_counts: bool) -> Self {
        let p_value = chi2_survival(statistic, dof);
        Self {
            statistic,
            dof,
            p_value,
            alpha,
            accept: p_value >= alpha,
            degenerate: false,
            low_counts,
        }
    }

    pub fn to_csv(reports: &[TestReport]) -> String {
        let mut t = CsvTable::new(&["statistic", "dof", "p_value", "alpha", "accept", "degenerate", "low_counts"]);
        for r in reports {
            t.row_str(&[
                fmt_f64(r.statistic),
                r.dof.to_string(),
                fmt_f64(r.p_value),
                fmt_f64(r.alpha),
                u8::from(r.accept).to_string(),
                u8::from(r.degenerate).to_string(),
                u8::from(r.low_counts).to_string(),
            ]);
        }
        t.into_string()
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi2_survival(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    if !statistic.is_finite() {
        return 0.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0).clamp(0.0, 1.0)
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

fn range(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Goodness of fit to a uniform distribution over the sample range.
pub fn chi2_uniform(samples: &[f64], bins: usize, alpha: f64) -> Result<TestReport> {
    if bins < 2 {
        return Err(invalid("need at least 2 bins"));
    }
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    let (lo, hi) = range(samples);
    if !(hi > lo) {
        return Ok(TestReport::degenerate(alpha, bins - 1));
    }
    let mut counts = vec![0usize; bins];
    for &v in samples {
        counts[bin_index(v, lo, hi, bins)] += 1;
    }
    let n = samples.len() as f64;
    let expected = n / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    Ok(TestReport::from_statistic(stat, bins - 1, alpha, samples.len() < 5 * bins))
}

/// Contingency-table test of independence over equal-width bins.
pub fn chi2_independence(x: &[f64], y: &[f64], bins: usize, alpha: f64) -> Result<TestReport> {
    if x.len() != y.len() {
        return Err(invalid("x and y must have equal length"));
    }
    if bins < 2 {
        return Err(invalid("need at least 2 bins"));
    }
    if x.is_empty() {
        return Err(invalid("no samples"));
    }
    let full_dof = (bins - 1) * (bins - 1);
    let (xlo, xhi) = range(x);
    let (ylo, yhi) = range(y);
    if !(xhi > xlo) || !(yhi > ylo) {
        return Ok(TestReport::degenerate(alpha, full_dof));
    }
    let mut table = vec![0usize; bins * bins];
    for (&a, &b) in x.iter().zip(y) {
        table[bin_index(a, xlo, xhi, bins) * bins + bin_index(b, ylo, yhi, bins)] += 1;
    }
    let rows: Vec<usize> = (0..bins).map(|i| (0..bins).map(|j| table[i * bins + j]).sum()).collect();
    let cols: Vec<usize> = (0..bins).map(|j| (0..bins).map(|i| table[i * bins + j]).sum()).collect();
    let live_rows: Vec<usize> = (0..bins).filter(|&i| rows[i] > 0).collect();
    let live_cols: Vec<usize> = (0..bins).filter(|&j| cols[j] > 0).collect();
    if live_rows.len() < 2 || live_cols.len() < 2 {
        return Ok(TestReport::degenerate(alpha, full_dof));
    }
    let n = x.len() as f64;
    let mut stat = 0.0;
    let mut low = false;
    for &i in &live_rows {
        for &j in &live_cols {
            let e = rows[i] as f64 * cols[j] as f64 / n;
            low |= e < 5.0;
            let o = table[i * bins + j] as f64;
            stat += (o - e) * (o - e) / e;
        }
    }
    let dof = (live_rows.len() - 1) * (live_cols.len() - 1);
    Ok(TestReport::from_statistic(stat, dof, alpha, low))
}

/// Pearson correlations between the columns of `table` (`|B| x N`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub values: Vec<f64>,
    /// `true` where a column had zero variance; the entry is stored as NaN.
    pub undefined: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Mean absolute off-diagonal entry over defined pairs.
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && !self.undefined[i * self.n + j] {
                    sum += self.get(i, j).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }

    pub fn any_undefined(&self) -> bool {
        self.undefined.iter().any(|&u| u)
    }

    /// Grid CSV with a `member` header column, undefined entries written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = vec!["member".into()];
        header.extend((0..self.n).map(|j| format!("q{j}")));
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(&refs);
        for i in 0..self.n {
            let mut row = vec![format!("q{i}")];
            for j in 0..self.n {
                row.push(if self.undefined[i * self.n + j] { "nan".into() } else { fmt_f64(self.get(i, j)) });
            }
            t.row_str(&row);
        }
        t.into_string()
    }
}

pub fn pearson_matrix(q_table: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if q_table.len() < 2 {
        return Err(invalid("need at least two rows"));
    }
    let n = q_table[0].len();
    if q_table.iter().any(|r| r.len() != n) {
        return Err(invalid("ragged table"));
    }
    let b = q_table.len() as f64;
    let means: Vec<f64> = (0..n).map(|j| q_table.iter().map(|r| r[j]).sum::<f64>() / b).collect();
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|j| q_table.iter().map(|r| r[j] - means[j]).collect())
        .collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut values = vec![0.0; n * n];
    let mut undefined = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (v, undef) = if norms[i] == 0.0 || norms[j] == 0.0 {
                (f64::NAN, true)
            } else if i == j {
                (1.0, false)
            } else {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, c)| a * c).sum();
                ((dot / (norms[i] * norms[j])).clamp(-1.0, 1.0), false)
            };
            values[i * n + j] = v;
            values[j * n + i] = v;
            undefined[i * n + j] = undef;
            undefined[j * n + i] = undef;
        }
    }
    Ok(CorrelationMatrix { n, values, undefined })
}

/// Acceptance ratio of pairwise independence tests over the columns of a
/// `|B| x N` table.
pub fn pairwise_independence_ratio(q_table: &[Vec<f64>], bins: usize, alpha: f64) -> Result<f64> {
    let n = q_table.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(invalid("need at least two members"));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|j| q_table.iter().map(|r| r[j]).collect()).collect();
    let mut accepted = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            accepted += usize::from(chi2_independence(&cols[i], &cols[j], bins, alpha)?.accept);
            total += 1;
        }
    }
    Ok(accepted as f64 / total as f64)
}

/// Acceptance ratio of per-row uniformity tests (each row is one ensemble).
pub fn rowwise_uniformity_ratio(q_table: &[Vec<f64>], bins: usize, alpha: f64) -> Result<f64> {
    if q_table.is_empty() {
        return Err(invalid("empty table"));
    }
    let mut accepted = 0usize;
    for r in q_table {
        accepted += usize::from(chi2_uniform(r, bins, alpha)?.accept);
    }
    Ok(accepted as f64 / q_table.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSummary {
    pub histogram: Histogram,
    pub total_spikes: usize,
    pub total_eigenvalues: usize,
    pub collapsed_rows: usize,
    /// Every eigenvalue magnitude beyond 2, in row order.
    pub spikes: Vec<f64>,
}

impl SpikeSummary {
    pub fn spike_rate(&self) -> f64 {
        self.total_spikes as f64 / self.total_eigenvalues.max(1) as f64
    }
}

/// Runs the forward spectral pipeline on every row of member Q-values and
/// collects the eigenvalues outside `[-2, 2]`. Row `j` uses seed `perm_seed + j`.
pub fn spike_histogram_from_qvalues(rows: &[Vec<f64>], perm_seed: u64, bins: usize) -> Result<SpikeSummary> {
    let spectra: Vec<(Vec<f64>, bool)> = rows
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            q_spectrum(r, perm_seed.wrapping_add(j as u64), DEFAULT_SIGMA_FLOOR).map(|(s, c)| (s.eigenvalues, c))
        })
        .collect::<Result<_>>()?;
    let mut spikes = Vec::new();
    let mut total_eigenvalues = 0;
    let mut collapsed_rows = 0;
    for (eig, collapsed) in &spectra {
        total_eigenvalues += eig.len();
        collapsed_rows += usize::from(*collapsed);
        spikes.extend(eig.iter().filter(|l| l.abs() > 2.0).copied());
    }
    let mags: Vec<f64> = spikes.iter().map(|l| l.abs()).collect();
    let hi = mags.iter().copied().fold(3.0f64, f64::max);
    let histogram = Histogram::new(&mags, 2.0, hi, bins.max(1))?;
    Ok(SpikeSummary {
        histogram,
        total_spikes: spikes.len(),
        total_eigenvalues,
        collapsed_rows,
        spikes,
    })
}

/// Member Q-values at `(state, action)` pairs: one row per pair, one column per member.
pub fn member_q_table(members: &[MlpParams], world: &GridWorld, pairs: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    if members.is_empty() || pairs.is_empty() {
        return Err(invalid("need members and evaluation pairs"));
    }
    let feats: Vec<Vec<f64>> = pairs.iter().map(|&(s, _)| net_input(&world.features(s))).collect();
    let batch = Batch::from_rows(&feats)?;
    let outs: Vec<Batch> = members.iter().map(|m| m.predict(&batch)).collect::<Result<_>>()?;
    for &(_, a) in pairs {
        if a >= outs[0].cols {
            return Err(invalid(format!("action {a} out of range")));
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(r, &(_, a))| outs.iter().map(|o| o.get(r, a)).collect())
        .collect())
}

/// Every decision state paired with every action.
pub fn all_state_action_pairs(world: &GridWorld) -> Vec<(usize, usize)> {
    world
        .decision_states()
        .into_iter()
        .flat_map(|s| (0..world.n_actions()).map(move |a| (s, a)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    /// Mean and std of `(ens_eval(Q) - G) / max(|mean G|, 1e-6)` where `G` is the Monte-Carlo return.
    pub mean: f64,
    pub std: f64,
    /// The normalizer actually used.
    pub scale: f64,
    /// Largest Monte-Carlo standard error over the pairs, in return units.
    pub max_std_error: f64,
}

/// Normalized bias of an ensemble (given as its per-pair Q table) against
/// Monte-Carlo returns of `policy`. Pair `k` uses seed `derive_seed(seed, k)`.
pub fn bias_stats(
    q_table: &[Vec<f64>],
    rule: EvalRule,
    world: &GridWorld,
    policy: &dyn StatePolicy,
    pairs: &[(usize, usize)],
    n_rollouts: usize,
    seed: u64,
) -> Result<BiasStats> {
    if pairs.is_empty() || q_table.len() != pairs.len() {
        return Err(invalid("need one Q row per evaluation pair"));
    }
    let horizon = default_horizon(world.gamma);
    let mc: Vec<_> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(s, a))| mc_return(world, policy, s, a, horizon, n_rollouts, derive_seed(seed, k as u64)))
        .collect::<Result<_>>()?;
    let scale = (mc.iter().map(|m| m.mean).sum::<f64>() / mc.len() as f64).abs().max(1e-6);
    let biases: Vec<f64> = q_table
        .iter()
        .zip(&mc)
        .map(|(row, m)| Ok((ens_eval(rule, row)? - m.mean) / scale))
        .collect::<Result<_>>()?;
    let n = biases.len() as f64;
    let mean = biases.iter().sum::<f64>() / n;
    let std = (biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n).sqrt();
    Ok(BiasStats {
        mean,
        std,
        scale,
        max_std_error: mc.iter().map(|m| m.std_error()).fold(0.0, f64::max),
    })
}

/// Spike summary of trained networks over the given state-action pairs.
pub fn spike_histogram(
    members: &[MlpParams],
    world: &GridWorld,
    pairs: &[(usize, usize)],
    perm_seed: u64,
    bins: usize,
) -> Result<SpikeSummary> {
    if members.len() < 3 {
        return Err(invalid("spike histogram needs at least three members"));
    }
    spike_histogram_from_qvalues(&member_q_table(members, world, pairs)?, perm_seed, bins)
}

/// Asymptotic error of the optimal spike test, `erfc(sqrt(-log(1 - psi^2)) / 4)`.
pub fn optimal_detection_error(psi: f64) -> f64 {
    if psi >= 1.0 {
        return 0.0;
    }
    erfc(0.25 * (-(1.0 - psi * psi).ln()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub psi_grid: Vec<f64>,
    pub empirical_error: Vec<f64>,
    pub erfc_reference: Vec<f64>,
    /// Monte-Carlo standard error of each empirical error.
    pub std_error: Vec<f64>,
    pub kl_threshold: f64,
    pub trials: usize,
    pub n_dim: usize,
}

impl DetectionCurve {
    /// CSV with header `psi,empirical_error,erfc_reference`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["psi", "empirical_error", "erfc_reference"]);
        for k in 0..self.psi_grid.len() {
            t.row_f64(&[self.psi_grid[k], self.empirical_error[k], self.erfc_reference[k]]);
        }
        t.into_string()
    }
}

/// KL statistic of one scaled spiked sample.
fn kl_statistic(psi: f64, n_dim: usize, seed: u64) -> Result<f64> {
    let params = SpikedModelParams::new(psi, n_dim);
    let x = sample_spiked_wishart(&params, seed)?.scaled(params.semicircle_scale());
    let spectrum = eigvalsh_spectrum(&x)?;
    Ok(kl_to_semicircle(&spectrum, DEFAULT_RHO, DEFAULT_EPS)?.0)
}

pub const CALIBRATION_DRAWS: usize = 500;

/// 95th percentile of the KL statistic over pure-noise draws.
pub fn calibrate_kl_threshold(n_dim: usize, draws: usize, seed: u64) -> Result<f64> {
    let mut stats: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|k| kl_statistic(0.0, n_dim, derive_seed(seed, k as u64)))
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    let idx = ((0.95 * draws as f64).ceil() as usize).clamp(1, draws) - 1;
    Ok(stats[idx])
}

/// Type-I plus type-II error of the test `KL >= threshold` for each psi.
///
/// `kl_threshold = None` calibrates on [`CALIBRATION_DRAWS`] noise samples.
pub fn detection_experiment(
    psi_grid: &[f64],
    n_dim: usize,
    trials: usize,
    kl_threshold: Option<f64>,
    seed: u64,
) -> Result<DetectionCurve> {
    if n_dim < 64 {
        return Err(invalid("n_dim must be >= 64"));
    }
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    if psi_grid.iter().any(|&p| !(0.0..1.0).contains(&p)) {
        return Err(invalid("psi values must lie in [0, 1)"));
    }
    let threshold = match kl_threshold {
        Some(t) => t,
        None => calibrate_kl_threshold(n_dim, CALIBRATION_DRAWS, derive_seed(seed, 0xCA11))?,
    };
    let null_seed = derive_seed(seed, 0x0);
    let null_reject: usize = (0..trials)
        .into_par_iter()
        .map(|k| kl_statistic(0.0, n_dim, derive_seed(null_seed, k as u64)).map(|s| usize::from(s >= threshold)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let type1 = null_reject as f64 / trials as f64;

    let mut empirical_error = Vec::with_capacity(psi_grid.len());
    let mut std_error = Vec::with_capacity(psi_grid.len());
    for (g, &psi) in psi_grid.iter().enumerate() {
        let alt_seed = derive_seed(seed, 1 + g as u64);
        let accepted: usize = (0..trials)
            .into_par_iter()
            .map(|k| kl_statistic(psi, n_dim, derive_seed(alt_seed, k as u64)).map(|s| usize::from(s < threshold)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        let type2 = accepted as f64 / trials as f64;
        let t = trials as f64;
        empirical_error.push(type1 + type2);
        std_error.push((type1 * (1.0 - type1) / t + type2 * (1.0 - type2) / t).sqrt());
    }
    Ok(DetectionCurve {
        psi_grid: psi_grid.to_vec(),
        erfc_reference: psi_grid.iter().map(|&p| optimal_detection_error(p)).collect(),
        empirical_error,
        std_error,
        kl_threshold: threshold,
        trials,
        n_dim,
    })
}
