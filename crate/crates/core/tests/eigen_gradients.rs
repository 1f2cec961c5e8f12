use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use spqr_core::eigen::*;
use spqr_core::rng::rng_from_seed;
use spqr_core::spectral::{kl_to_semicircle, sample_goe, GRAD_GUARD};
use spqr_core::SymMatrix;

fn random_sym(dim: usize, seed: u64) -> SymMatrix {
    sample_goe(dim, 1.0, seed).unwrap()
}

/// Central difference of `f` along the symmetric perturbation of `(p, q)` and `(q, p)`.
fn sym_fd(x: &SymMatrix, p: usize, q: usize, h: f64, f: &impl Fn(&SymMatrix) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.set(p, q, x.get(p, q) + h);
    let mut minus = x.clone();
    minus.set(p, q, x.get(p, q) - h);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Analytic counterpart of `sym_fd`: off-diagonal pairs collect both cells.
fn pair_grad(g: &SymMatrix, p: usize, q: usize) -> f64 {
    if p == q {
        g.get(p, p)
    } else {
        2.0 * g.get(p, q)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[test]
fn reconstruction_and_orthonormality_random_16() {
    for seed in 0..10 {
        let x = random_sym(16, seed);
        let s = eigh(&x).unwrap();
        assert!(s.reconstruction_error(&x) < 1e-8 * x.max_abs().max(1.0));
        assert!(s.orthonormality_error() < 1e-10);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!((s.eigenvalues.iter().sum::<f64>() - x.trace()).abs() < 1e-9 * x.frobenius_norm());
    }
}

#[test]
fn reconstruction_large_and_values_only_agree() {
    let x = random_sym(200, 3);
    let s = eigh(&x).unwrap();
    assert!(s.reconstruction_error(&x) < 1e-8 * x.max_abs().max(1.0));
    let vals = eigvalsh(&x).unwrap();
    for (a, b) in vals.iter().zip(&s.eigenvalues) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn deterministic_with_sign_convention() {
    let x = random_sym(12, 9);
    let a = eigh(&x).unwrap();
    let b = eigh(&x).unwrap();
    assert_eq!(a, b);
    for k in 0..12 {
        let v = a.eigenvector(k);
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        assert!(pivot > 0.0);
    }
}

#[test]
fn values_backward_matches_fd_sum_of_squares() {
    let loss = |m: &SymMatrix| eigvalsh(m).unwrap().iter().map(|l| l * l).sum::<f64>();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = random_sym(8, 100 + seed);
        let s = eigh(&x).unwrap();
        let g: Vec<f64> = s.eigenvalues.iter().map(|l| 2.0 * l).collect();
        let grad = eigh_backward_values(&s, &g).unwrap().dl_dx;
        for p in 0..8 {
            for q in 0..=p {
                let fd = sym_fd(&x, p, q, 1e-5, &loss);
                worst = worst.max(rel_err(fd, pair_grad(&grad, p, q), 1e-6));
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn values_backward_is_exactly_symmetric() {
    let x = random_sym(7, 4);
    let s = eigh(&x).unwrap();
    let g = eigh_backward_values(&s, &[0.3, -1.0, 2.0, 0.0, 0.5, 1.5, -0.2]).unwrap().dl_dx;
    for p in 0..7 {
        for q in 0..7 {
            assert_eq!(g.get(p, q).to_bits(), g.get(q, p).to_bits());
        }
    }
}

/// Loss on eigenvectors: sum_ij W_ij U_ij^2, plus a linear eigenvalue term.
fn vector_loss_setup(seed: u64, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..dim * dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    (w, c)
}

#[test]
fn full_backward_matches_fd() {
    let dim = 4;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let x = random_sym(dim, 500 + seed);
        let (w, c) = vector_loss_setup(seed, dim);
        let loss = |m: &SymMatrix| {
            let s = eigh(m).unwrap();
            let vec_part: f64 = (0..dim * dim).map(|i| w[i] * s.eigenvectors[i].powi(2)).sum();
            let val_part: f64 = s.eigenvalues.iter().zip(&c).map(|(l, ci)| l * ci).sum();
            vec_part + val_part
        };
        let s = eigh(&x).unwrap();
        let g_vec: Vec<f64> = (0..dim * dim).map(|i| 2.0 * w[i] * s.eigenvectors[i]).collect();
        let grad = eigh_backward_full(&s, &c, &g_vec).unwrap().dl_dx;
        for p in 0..dim {
            for q in 0..=p {
                let fd = sym_fd(&x, p, q, 1e-6, &loss);
                worst = worst.max(rel_err(fd, pair_grad(&grad, p, q), 1e-4));
            }
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}

#[test]
fn full_backward_without_vector_term_reduces_to_values() {
    let x = random_sym(5, 8);
    let s = eigh(&x).unwrap();
    let g = [0.1, -0.7, 0.3, 2.0, 1.0];
    let a = eigh_backward_full(&s, &g, &[0.0; 25]).unwrap().dl_dx;
    let b = eigh_backward_values(&s, &g).unwrap().dl_dx;
    for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((u - v).abs() < 1e-14);
    }
}

#[test]
fn chain_rule_through_kl_loss() {
    let dim = 6;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 5 {
        seed += 1;
        let x = sample_goe(dim, 0.6, seed).unwrap();
        let s = eigh(&x.scaled(scale)).unwrap();
        if s.eigenvalues.iter().any(|l| l.abs() >= 2.0 - GRAD_GUARD - 0.05) {
            continue;
        }
        let (_, dl) = kl_to_semicircle(&s, 0.5, 0.01).unwrap();
        let grad = eigh_backward_values(&s, &dl).unwrap().dl_dx.scaled(scale);
        let loss = |m: &SymMatrix| {
            let sp = eigh(&m.scaled(scale)).unwrap();
            kl_to_semicircle(&sp, 0.5, 0.01).unwrap().0
        };
        for p in 0..dim {
            for q in 0..=p {
                let fd = sym_fd(&x, p, q, 1e-5, &loss);
                let err = rel_err(fd, pair_grad(&grad, p, q), 1e-4);
                assert!(err < 1e-3, "seed {seed} ({p},{q}) fd={fd} an={}", pair_grad(&grad, p, q));
            }
        }
        checked += 1;
    }
}
