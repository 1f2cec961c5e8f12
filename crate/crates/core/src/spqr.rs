//! Spectral independence loss for an ensemble of Q-values.
//!
//! The N member values at one `(s', a')` are shuffled into the lower triangle
//! of a `D x D` symmetric matrix (`D (D + 1) / 2 <= N`), standardized, scaled
//! by `1 / sqrt(D)` and eigendecomposed. The loss is the discrete KL divergence
//! of the resulting spectrum to the soft semicircle; gradients flow back to
//! every Q-value that was placed in the matrix.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigh, eigh_backward_values};
use crate::error::{invalid, Error, Result};
use crate::matrix::{Spectrum, SymMatrix};
use crate::rng::rng_from_seed;
use crate::spectral::kl_values;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

/// Largest `D` with `D (D + 1) / 2 <= n`.
pub fn matrix_dim_for(n: usize) -> usize {
    let mut d = (((1.0 + 8.0 * n as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    while d * (d + 1) / 2 > n {
        d -= 1;
    }
    while (d + 1) * (d + 2) / 2 <= n {
        d += 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrixBuild {
    pub matrix: SymMatrix,
    /// Ensemble index feeding each lower-triangle cell, in row-major `(p, q)`, `p >= q` order.
    pub index_map: Vec<usize>,
    pub perm: Vec<usize>,
    pub used: usize,
}

impl QMatrixBuild {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Distinct entries in the same order as `index_map`.
    pub fn distinct_entries(&self) -> Vec<f64> {
        lower_triangle(&self.matrix)
    }
}

fn lower_triangle(m: &SymMatrix) -> Vec<f64> {
    let d = m.dim();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for p in 0..d {
        for q in 0..=p {
            out.push(m.get(p, q));
        }
    }
    out
}

pub fn build_q_matrix(qvals: &[f64], perm_seed: u64) -> Result<QMatrixBuild> {
    let n = qvals.len();
    if n < 3 {
        return Err(invalid(format!("need at least 3 ensemble values, got {n}")));
    }
    let d = matrix_dim_for(n);
    let used = d * (d + 1) / 2;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(perm_seed));
    let index_map = perm[..used].to_vec();
    let mut k = 0;
    let matrix = SymMatrix::from_lower_fn(d, |_, _| {
        let v = qvals[index_map[k]];
        k += 1;
        v
    })?;
    Ok(QMatrixBuild {
        matrix,
        index_map,
        perm,
        used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub matrix: SymMatrix,
    pub mu: f64,
    /// Population std of the distinct entries, before clamping.
    pub sigma: f64,
    pub clamped: bool,
}

/// Standardizes by the mean and population std of the distinct entries.
pub fn normalize_matrix(build: &QMatrixBuild, sigma_floor: f64) -> Normalized {
    let entries = build.distinct_entries();
    let m = entries.len() as f64;
    let mu = entries.iter().sum::<f64>() / m;
    let var = entries.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / m;
    let sigma = var.sqrt();
    let clamped = !(sigma >= sigma_floor);
    let denom = sigma.max(sigma_floor);
    let d = build.dim();
    let matrix = SymMatrix::from_lower_fn(d, |p, q| (build.matrix.get(p, q) - mu) / denom)
        .expect("dimension already validated");
    Normalized {
        matrix,
        mu,
        sigma,
        clamped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpqrLossOut {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub collapsed: bool,
}

/// Forward pass only: the spectrum of the standardized, `1/sqrt(D)`-scaled matrix.
pub fn q_spectrum(qvals: &[f64], perm_seed: u64, sigma_floor: f64) -> Result<(Spectrum, bool)> {
    let build = build_q_matrix(qvals, perm_seed)?;
    let norm = normalize_matrix(&build, sigma_floor);
    let d = build.dim();
    if norm.clamped {
        return Ok((Spectrum::from_eigenvalues(vec![0.0; d])?, true));
    }
    let scaled = norm.matrix.scaled(1.0 / (d as f64).sqrt());
    Ok((eigh(&scaled)?, false))
}

pub fn spqr_loss_single(qvals: &[f64], rho: f64, eps: f64, perm_seed: u64) -> Result<SpqrLossOut> {
    spqr_loss_single_with_floor(qvals, rho, eps, perm_seed, DEFAULT_SIGMA_FLOOR)
}

pub fn spqr_loss_single_with_floor(
    qvals: &[f64],
    rho: f64,
    eps: f64,
    perm_seed: u64,
    sigma_floor: f64,
) -> Result<SpqrLossOut> {
    if !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) {
        return Err(invalid(format!("need 0 < rho < 1 and eps > 0, got rho={rho}, eps={eps}")));
    }
    if let Some(bad) = qvals.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("q-value {bad}")));
    }
    let n = qvals.len();
    let build = build_q_matrix(qvals, perm_seed)?;
    let norm = normalize_matrix(&build, sigma_floor);
    let d = build.dim();
    if norm.clamped {
        let (loss, _) = kl_values(&vec![0.0; d], rho, eps);
        return Ok(SpqrLossOut {
            loss,
            grad_q: vec![0.0; n],
            mu: norm.mu,
            sigma: norm.sigma,
            collapsed: true,
        });
    }

    let scale = 1.0 / (d as f64).sqrt();
    let spectrum = eigh(&norm.matrix.scaled(scale))?;
    let (loss, dl_dlambda) = kl_values(&spectrum.eigenvalues, rho, eps);
    let dl_dx = eigh_backward_values(&spectrum, &dl_dlambda)?.dl_dx;

    // Gradient with respect to each distinct standardized entry z_k; off-diagonal
    // cells appear twice in the matrix.
    let mut g = Vec::with_capacity(build.used);
    for p in 0..d {
        for q in 0..=p {
            let mult = if p == q { 1.0 } else { 2.0 };
            g.push(mult * scale * dl_dx.get(p, q));
        }
    }
    // Back through z = (e - mu) / sigma with population statistics.
    let z = lower_triangle(&norm.matrix);
    let m = g.len() as f64;
    let g_mean = g.iter().sum::<f64>() / m;
    let gz_mean = g.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m;
    let mut grad_q = vec![0.0; n];
    for (k, &idx) in build.index_map.iter().enumerate() {
        grad_q[idx] += (g[k] - g_mean - z[k] * gz_mean) / norm.sigma;
    }
    Ok(SpqrLossOut {
        loss,
        grad_q,
        mu: norm.mu,
        sigma: norm.sigma,
        collapsed: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpqrBatchOut {
    pub loss: f64,
    /// Row-major `|B| x N`, already scaled by `1 / |B|`.
    pub grads: Vec<Vec<f64>>,
    pub row_losses: Vec<f64>,
    pub collapsed_rows: usize,
}

/// Batch mean of the single-row loss; row `j` uses seed `perm_seed + j`.
pub fn spqr_loss_batch(qmat: &[Vec<f64>], rho: f64, eps: f64, perm_seed: u64) -> Result<SpqrBatchOut> {
    if qmat.is_empty() {
        return Err(invalid("batch must contain at least one row"));
    }
    let n = qmat[0].len();
    if let Some(r) = qmat.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    let rows: Vec<SpqrLossOut> = qmat
        .par_iter()
        .enumerate()
        .map(|(j, row)| spqr_loss_single(row, rho, eps, perm_seed.wrapping_add(j as u64)))
        .collect::<Result<_>>()?;
    let b = rows.len() as f64;
    let mut loss = 0.0;
    let mut collapsed_rows = 0;
    for r in &rows {
        loss += r.loss;
        collapsed_rows += usize::from(r.collapsed);
    }
    loss /= b;
    let row_losses = rows.iter().map(|r| r.loss).collect();
    let grads = rows
        .into_iter()
        .map(|r| r.grad_q.into_iter().map(|g| g / b).collect())
        .collect();
    Ok(SpqrBatchOut {
        loss,
        grads,
        row_losses,
        collapsed_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matrix_dims() {
        assert_eq!(matrix_dim_for(3), 2);
        assert_eq!(matrix_dim_for(10), 4);
        assert_eq!(matrix_dim_for(50), 9);
        assert_eq!(matrix_dim_for(45), 9);
        assert_eq!(matrix_dim_for(44), 8);
    }

    #[test]
    fn build_uses_expected_counts() {
        let q: Vec<f64> = (0..10).map(f64::from).collect();
        let b = build_q_matrix(&q, 1).unwrap();
        assert_eq!((b.dim(), b.used), (4, 10));
        let b3 = build_q_matrix(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!((b3.dim(), b3.used), (2, 3));
        let q50: Vec<f64> = (0..50).map(f64::from).collect();
        let b50 = build_q_matrix(&q50, 9).unwrap();
        assert_eq!((b50.dim(), b50.used), (9, 45));
        let mut seen = b50.index_map.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 45);
        assert!(build_q_matrix(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn unused_members_get_zero_gradient() {
        let q: Vec<f64> = (0..50).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let out = spqr_loss_single(&q, 0.5, 0.01, 5).unwrap();
        let b = build_q_matrix(&q, 5).unwrap();
        let unused: Vec<usize> = (0..50).filter(|i| !b.index_map.contains(i)).collect();
        assert_eq!(unused.len(), 5);
        assert!(unused.iter().all(|&i| out.grad_q[i] == 0.0));
    }

    #[test]
    fn constant_input_collapses() {
        let b = build_q_matrix(&[5.0; 6], 0).unwrap();
        let n = normalize_matrix(&b, DEFAULT_SIGMA_FLOOR);
        assert_eq!(n.mu, 5.0);
        assert!(n.clamped);
        assert_eq!(n.matrix.max_abs(), 0.0);

        let out = spqr_loss_single(&[5.0; 10], 0.5, 0.01, 3).unwrap();
        let d = 4.0f64;
        let expected = (1.0 / d / (0.5 / PI)).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!(out.grad_q.iter().all(|&g| g == 0.0));
        assert!(out.collapsed);
    }

    #[test]
    fn three_values_statistics() {
        let b = build_q_matrix(&[-1.0, 0.0, 1.0], 2).unwrap();
        let n = normalize_matrix(&b, DEFAULT_SIGMA_FLOOR);
        assert!(n.mu.abs() < 1e-15);
        assert!((n.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normalized_entries_are_standardized() {
        let q: Vec<f64> = (0..21).map(|i| (i as f64 * 1.7).cos() * 3.0 + 2.0).collect();
        let b = build_q_matrix(&q, 4).unwrap();
        let n = normalize_matrix(&b, DEFAULT_SIGMA_FLOOR);
        let z = lower_triangle(&n.matrix);
        let m = z.len() as f64;
        let mean = z.iter().sum::<f64>() / m;
        let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
        assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn batch_of_one_equals_single() {
        let q = vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4, 1.1, 0.0, -2.2, 0.9];
        let single = spqr_loss_single(&q, 0.5, 0.01, 17).unwrap();
        let batch = spqr_loss_batch(&[q], 0.5, 0.01, 17).unwrap();
        assert_eq!(batch.loss, single.loss);
        assert_eq!(batch.grads[0], single.grad_q);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(spqr_loss_single(&[1.0, f64::NAN, 0.0], 0.5, 0.01, 0).is_err());
    }
}
