use std::time::Instant;

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use spqr_core::rng::rng_from_seed;
use spqr_core::spqr::*;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// 80% of members share a common value `z` (collapsed), the rest are independent.
fn partially_collapsed(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    let collapsed = (n * 4) / 5;
    (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            if i < collapsed {
                z + 0.01 * noise
            } else {
                noise
            }
        })
        .collect()
}

fn fd_grad(q: &[f64], seed: u64, h: f64) -> Vec<f64> {
    (0..q.len())
        .map(|i| {
            let mut plus = q.to_vec();
            plus[i] += h;
            let mut minus = q.to_vec();
            minus[i] -= h;
            let lp = spqr_loss_single(&plus, 0.5, 0.01, seed).unwrap().loss;
            let lm = spqr_loss_single(&minus, 0.5, 0.01, seed).unwrap().loss;
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences_n10() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let q = normals(10, seed);
        let out = spqr_loss_single(&q, 0.5, 0.01, seed).unwrap();
        let (spec, _) = q_spectrum(&q, seed, DEFAULT_SIGMA_FLOOR).unwrap();
        // stay clear of the gradient guard band at |lambda| = 2
        if spec.eigenvalues.iter().any(|l| (l.abs() - 2.0).abs() < 0.05) {
            continue;
        }
        let fd = fd_grad(&q, seed, 1e-6);
        let scale = fd.iter().chain(&out.grad_q).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        for (a, b) in fd.iter().zip(&out.grad_q) {
            assert!((a - b).abs() / scale < 1e-3, "seed {seed}: fd {a} vs {b}");
        }
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn deterministic_given_seed() {
    let q = normals(10, 3);
    assert_eq!(spqr_loss_single(&q, 0.5, 0.01, 8).unwrap(), spqr_loss_single(&q, 0.5, 0.01, 8).unwrap());
}

#[test]
fn duplicated_rows_share_losses_with_same_seed() {
    let q = normals(10, 4);
    let a = spqr_loss_batch(std::slice::from_ref(&q), 0.5, 0.01, 50).unwrap();
    let b = spqr_loss_batch(&[q.clone(), q], 0.5, 0.01, 50).unwrap();
    assert_eq!(a.row_losses[0], b.row_losses[0]);
    assert_eq!(b.grads[0].iter().map(|g| g * 2.0).collect::<Vec<_>>(), a.grads[0]);
}

#[test]
fn perturbing_unused_member_leaves_loss_unchanged() {
    let q = normals(12, 5); // D = 4 uses 10 of 12
    let b = build_q_matrix(&q, 21).unwrap();
    let unused: Vec<usize> = (0..12).filter(|i| !b.index_map.contains(i)).collect();
    let base = spqr_loss_single(&q, 0.5, 0.01, 21).unwrap().loss;
    for i in unused {
        let mut p = q.clone();
        p[i] += 3.0;
        assert_eq!(spqr_loss_single(&p, 0.5, 0.01, 21).unwrap().loss, base);
    }
}

#[test]
fn independent_ensemble_has_lower_loss_than_collapsed_majority() {
    let mean = |f: &dyn Fn(u64) -> Vec<f64>| -> f64 {
        (0..500u64)
            .map(|s| spqr_loss_single(&f(s), 0.5, 0.01, 10_000 + s).unwrap().loss)
            .sum::<f64>()
            / 500.0
    };
    let iid = mean(&|s| normals(45, s));
    let corr = mean(&|s| partially_collapsed(45, 90_000 + s));
    assert!(iid < corr, "iid {iid} vs collapsed {corr}");
}

#[test]
fn shared_offset_alone_is_invisible_after_standardization() {
    // q_i = z + 0.01 n_i is an affine image of i.i.d. noise, so the loss matches exactly.
    for s in 0..20u64 {
        let n = normals(45, s);
        let shifted: Vec<f64> = n.iter().map(|v| 7.5 + 0.01 * v).collect();
        let a = spqr_loss_single(&n, 0.5, 0.01, s).unwrap().loss;
        let b = spqr_loss_single(&shifted, 0.5, 0.01, s).unwrap().loss;
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn batch_256_runtime() {
    let rows: Vec<Vec<f64>> = (0..256u64).map(|s| normals(10, s)).collect();
    // warm up the thread pool once
    spqr_loss_batch(&rows, 0.5, 0.01, 0).unwrap();
    let t = Instant::now();
    let out = spqr_loss_batch(&rows, 0.5, 0.01, 1).unwrap();
    let elapsed = t.elapsed();
    assert!(out.loss.is_finite());
    assert!(elapsed.as_millis() < 50, "{elapsed:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn affine_invariance(seed in 0u64..10_000, shift in -50.0f64..50.0, scale in 0.01f64..100.0) {
        let q = normals(10, seed);
        let moved: Vec<f64> = q.iter().map(|v| scale * v + shift).collect();
        let a = spqr_loss_single(&q, 0.5, 0.01, seed).unwrap();
        let b = spqr_loss_single(&moved, 0.5, 0.01, seed).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-8);
        // the gradient has no component along shifts or rescaling
        let sum: f64 = a.grad_q.iter().sum();
        let along: f64 = a.grad_q.iter().zip(&q).map(|(g, v)| g * v).sum();
        prop_assert!(sum.abs() < 1e-10);
        prop_assert!(along.abs() < 1e-10);
    }
}
