//! Finite-difference audits of every hand-written backward pass.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::{eigh, eigh_backward_full, eigh_backward_values, eigvalsh};
use crate::error::Result;
use crate::matrix::SymMatrix;
use crate::nn::{Activation, Batch, MlpParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::sample_goe;
use crate::spqr::{q_spectrum, spqr_loss_single, DEFAULT_SIGMA_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &str, cases: usize, max_rel_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            cases,
            max_rel_error,
            tolerance,
            passed: max_rel_error < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference along the symmetric pair `(p, q)`; the analytic
/// counterpart is `2 G_pq` off the diagonal and `G_pp` on it.
fn sym_fd(x: &SymMatrix, p: usize, q: usize, h: f64, f: &dyn Fn(&SymMatrix) -> Result<f64>) -> Result<f64> {
    let mut plus = x.clone();
    plus.set(p, q, x.get(p, q) + h);
    let mut minus = x.clone();
    minus.set(p, q, x.get(p, q) - h);
    Ok((f(&plus)? - f(&minus)?) / (2.0 * h))
}

fn pair_grad(g: &SymMatrix, p: usize, q: usize) -> f64 {
    if p == q {
        g.get(p, p)
    } else {
        2.0 * g.get(p, q)
    }
}

/// Eigenvalue-only backward on `cases` random 8x8 matrices, loss `sum c_k lambda_k^2`.
pub fn check_eigen_values(seed: u64, cases: usize) -> Result<SuiteResult> {
    let dim = 8;
    let mut worst = 0.0f64;
    for k in 0..cases {
        let s = derive_seed(seed, k as u64);
        let x = sample_goe(dim, 1.0, s)?;
        let mut rng = rng_from_seed(derive_seed(s, 1));
        let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.5).collect();
        let loss = |m: &SymMatrix| -> Result<f64> { Ok(eigvalsh(m)?.iter().zip(&c).map(|(l, ci)| ci * l * l).sum()) };
        let sp = eigh(&x)?;
        let g: Vec<f64> = sp.eigenvalues.iter().zip(&c).map(|(l, ci)| 2.0 * ci * l).collect();
        let grad = eigh_backward_values(&sp, &g)?.dl_dx;
        for p in 0..dim {
            for q in 0..=p {
                let fd = sym_fd(&x, p, q, 1e-5, &loss)?;
                worst = worst.max(rel_err(fd, pair_grad(&grad, p, q), 1e-6));
            }
        }
    }
    Ok(SuiteResult::new("sym_eigen_values", cases, worst, 1e-4))
}

/// Full backward on `cases` random 4x4 matrices with an eigenvector-dependent loss.
pub fn check_eigen_full(seed: u64, cases: usize) -> Result<SuiteResult> {
    let dim = 4;
    let mut worst = 0.0f64;
    for k in 0..cases {
        let s = derive_seed(seed, 1000 + k as u64);
        let x = sample_goe(dim, 1.0, s)?;
        let mut rng = rng_from_seed(derive_seed(s, 1));
        let w: Vec<f64> = (0..dim * dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let loss = |m: &SymMatrix| -> Result<f64> {
            let sp = eigh(m)?;
            let vec_part: f64 = (0..dim * dim).map(|i| w[i] * sp.eigenvectors[i].powi(2)).sum();
            Ok(vec_part + sp.eigenvalues.iter().zip(&c).map(|(l, ci)| l * ci).sum::<f64>())
        };
        let sp = eigh(&x)?;
        let gv: Vec<f64> = (0..dim * dim).map(|i| 2.0 * w[i] * sp.eigenvectors[i]).collect();
        let grad = eigh_backward_full(&sp, &c, &gv)?.dl_dx;
        for p in 0..dim {
            for q in 0..=p {
                let fd = sym_fd(&x, p, q, 1e-6, &loss)?;
                worst = worst.max(rel_err(fd, pair_grad(&grad, p, q), 1e-4));
            }
        }
    }
    Ok(SuiteResult::new("sym_eigen_full", cases, worst, 1e-3))
}

/// End-to-end SPQR loss gradient for ensembles of 10, relative to the largest
/// gradient entry. Draws whose spectrum sits near the `|lambda| = 2` guard band
/// are skipped because the clamp makes the loss non-smooth there.
pub fn check_spqr(seed: u64, cases: usize) -> Result<SuiteResult> {
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut k = 0u64;
    while done < cases && k < 50 * cases as u64 + 50 {
        let s = derive_seed(seed, 2000 + k);
        k += 1;
        let mut rng = rng_from_seed(s);
        let q: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (spec, collapsed) = q_spectrum(&q, s, DEFAULT_SIGMA_FLOOR)?;
        if collapsed || spec.eigenvalues.iter().any(|l| (l.abs() - 2.0).abs() < 0.05) {
            continue;
        }
        let out = spqr_loss_single(&q, 0.5, 0.01, s)?;
        let h = 1e-6;
        let mut fd = Vec::with_capacity(q.len());
        for i in 0..q.len() {
            let mut plus = q.clone();
            plus[i] += h;
            let mut minus = q.clone();
            minus[i] -= h;
            fd.push((spqr_loss_single(&plus, 0.5, 0.01, s)?.loss - spqr_loss_single(&minus, 0.5, 0.01, s)?.loss) / (2.0 * h));
        }
        let scale = fd.iter().chain(&out.grad_q).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        for (a, b) in fd.iter().zip(&out.grad_q) {
            worst = worst.max((a - b).abs() / scale);
        }
        done += 1;
    }
    let worst = if done < cases { f64::INFINITY } else { worst };
    Ok(SuiteResult::new("spqr_loss", done, worst, 1e-3))
}

/// Max relative error of every parameter gradient of a random network under
/// the loss `sum_rc C_rc out_rc`.
pub fn nn_max_rel_error(sizes: &[usize], activation: Activation, seed: u64) -> Result<f64> {
    let net = MlpParams::init(sizes, activation, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, 7));
    let rows = 4;
    let mut input = Batch::zeros(rows, sizes[0]);
    input.data.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
    let mut coef = Batch::zeros(rows, *sizes.last().unwrap_or(&1));
    coef.data.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
    let loss = |p: &MlpParams| -> Result<f64> {
        Ok(p.predict(&input)?.data.iter().zip(&coef.data).map(|(o, c)| o * c).sum())
    };
    let (_, cache) = net.forward(&input)?;
    let (grads, _) = net.backward(&cache, &coef)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let n_tensors = grads.tensors().count();
    for t in 0..n_tensors {
        let len = grads.tensors().nth(t).map_or(0, Vec::len);
        for i in 0..len {
            let mut plus = net.clone();
            plus.tensors_mut().nth(t).expect("tensor index")[i] += h;
            let mut minus = net.clone();
            minus.tensors_mut().nth(t).expect("tensor index")[i] -= h;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            let an = grads.tensors().nth(t).expect("tensor index")[i];
            worst = worst.max(rel_err(fd, an, 1e-6));
        }
    }
    Ok(worst)
}

/// Architectures exercised by the network suite: the reference `[3, 8, 1]`
/// plus the Q-network and policy shapes used by training configs.
pub const NN_ARCHITECTURES: [&[usize]; 5] = [&[3, 8, 1], &[2, 32, 32, 4], &[2, 64, 64, 4], &[2, 64, 64, 64, 4], &[2, 16, 4]];

pub fn check_nn(seed: u64) -> Result<SuiteResult> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (k, sizes) in NN_ARCHITECTURES.iter().enumerate() {
        for act in [Activation::Relu, Activation::Tanh] {
            worst = worst.max(nn_max_rel_error(sizes, act, derive_seed(seed, 3000 + k as u64))?);
            cases += 1;
        }
    }
    Ok(SuiteResult::new("tiny_nn", cases, worst, 1e-4))
}

/// Runs every suite.
pub fn run_all(seed: u64) -> Result<GradcheckReport> {
    let suites = vec![
        check_eigen_values(seed, 20)?,
        check_eigen_full(seed, 20)?,
        check_spqr(seed, 20)?,
        check_nn(seed)?,
    ];
    let passed = suites.iter().all(|s| s.passed);
    Ok(GradcheckReport { seed, suites, passed })
}
