use proptest::prelude::*;
use spqr_core::eigen::{eigvalsh, eigvalsh_spectrum};
use spqr_core::spectral::*;
use spqr_core::Spectrum;

/// Composite Simpson rule, used as an independent check of the closed forms.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let x = a + h * k as f64;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Inverse of the semicircle CDF by bisection on the numerically integrated density.
fn quantile_by_bisection(p: f64, sigma: f64) -> f64 {
    let cdf = |x: f64| simpson(|t| semicircle_pdf(t, sigma), -2.0 * sigma, x, 4000);
    let (mut lo, mut hi) = (-2.0 * sigma, 2.0 * sigma);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    best
}

fn scaled_goe_spectrum(dim: usize, seed: u64) -> Spectrum {
    let x = sample_goe(dim, 1.0, seed).unwrap();
    eigvalsh_spectrum(&x.scaled(1.0 / (dim as f64).sqrt())).unwrap()
}

#[test]
fn semicircle_integrates_to_one() {
    for sigma in [0.5, 1.0, 2.0] {
        let mass = simpson(|x| semicircle_pdf(x, sigma), -2.0 * sigma, 2.0 * sigma, 200_000);
        assert!((mass - 1.0).abs() < 1e-6, "sigma={sigma} mass={mass}");
    }
}

#[test]
fn closed_form_cdf_matches_quadrature() {
    for &x in &[-1.5, -0.3, 0.0, 0.9, 1.7] {
        let numeric = simpson(|t| semicircle_pdf(t, 1.0), -2.0, x, 100_000);
        assert!((numeric - semicircle_cdf(x, 1.0)).abs() < 1e-6);
    }
}

#[test]
fn ks_at_semicircle_quantiles_is_small() {
    let d = 100;
    let eig: Vec<f64> = (1..=d)
        .map(|i| quantile_by_bisection(i as f64 / (d + 1) as f64, 1.0))
        .collect();
    let ks = ks_distance(&Spectrum::from_eigenvalues(eig).unwrap(), 1.0);
    assert!(ks < 0.02, "ks={ks}");
}

#[test]
fn goe_512_follows_semicircle() {
    let s = scaled_goe_spectrum(512, 0);
    assert!(ks_distance(&s, 1.0) < 0.05);
    let dens = esd(&s);
    assert!((dens.normalization() - 1.0).abs() < 1e-12);
}

#[test]
fn goe_512_edge_frequency() {
    // max |lambda| <= 2.3 in more than 99% of draws; with 20 seeds that means all of them.
    let within = (0..20u64)
        .filter(|&seed| {
            let s = scaled_goe_spectrum(512, seed);
            s.eigenvalues.iter().all(|l| l.abs() <= 2.3)
        })
        .count();
    assert_eq!(within, 20);
}

#[test]
fn ks_decreases_with_dimension() {
    let mut means = Vec::new();
    for dim in [32usize, 64, 128, 256, 512] {
        let m: f64 = (0..20u64)
            .map(|seed| ks_distance(&scaled_goe_spectrum(dim, 1000 + seed), 1.0))
            .sum::<f64>()
            / 20.0;
        means.push(m);
    }
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn spiked_null_matches_goe_bulk() {
    let dim = 256;
    let p = SpikedModelParams::new(0.0, dim);
    let spiked = sample_spiked_wishart(&p, 5).unwrap().scaled(p.semicircle_scale());
    let a = eigvalsh(&spiked).unwrap();
    let b = scaled_goe_spectrum(dim, 6).eigenvalues;
    let ks = two_sample_ks(&a, &b);
    assert!(ks < 0.08, "ks={ks}");
}

fn spike_seed_rate(psi: f64, dim: usize, seeds: u64) -> (f64, f64) {
    let p = SpikedModelParams::new(psi, dim);
    let mut with = 0usize;
    let mut total = 0usize;
    for seed in 0..seeds {
        let x = sample_spiked_wishart(&p, 77_000 + seed).unwrap().scaled(p.semicircle_scale());
        let k = count_spikes(&eigvalsh_spectrum(&x).unwrap(), 0.0);
        with += usize::from(k > 0);
        total += k;
    }
    (with as f64 / seeds as f64, total as f64 / (seeds as usize * dim) as f64)
}

#[test]
fn spike_threshold_sweep() {
    let grid = [0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0];
    let rates: Vec<f64> = grid.iter().map(|&psi| spike_seed_rate(psi, 256, 50).0).collect();
    let first = grid
        .iter()
        .zip(&rates)
        .find(|(_, &r)| r > 0.9)
        .map(|(&p, _)| p)
        .unwrap();
    assert!(first <= SPIKE_THRESHOLD_PSI, "rates {rates:?}");
    for (&psi, &r) in grid.iter().zip(&rates) {
        if psi >= SPIKE_THRESHOLD_PSI {
            assert!(r > 0.9, "psi={psi} rate={r}");
        }
    }
}

#[test]
fn well_separated_spike_is_detected() {
    let (rate, _) = spike_seed_rate(10.0, 128, 50);
    assert!(rate > 0.9);
}

proptest! {
    #[test]
    fn kl_is_permutation_invariant(mut eig in prop::collection::vec(-3.0f64..3.0, 1..12), seed in 0u64..1000) {
        let a = Spectrum { eigenvalues: eig.clone(), eigenvectors: vec![], source_dim: eig.len() };
        let (la, _) = kl_to_semicircle(&a, 0.5, 0.01).unwrap();
        // deterministic shuffle
        let n = eig.len();
        for i in (1..n).rev() {
            let j = (seed as usize * 31 + i * 17) % (i + 1);
            eig.swap(i, j);
        }
        let b = Spectrum { eigenvalues: eig, eigenvectors: vec![], source_dim: n };
        let (lb, _) = kl_to_semicircle(&b, 0.5, 0.01).unwrap();
        prop_assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn no_spikes_inside_support(eig in prop::collection::vec(-2.0f64..=2.0, 1..20)) {
        let s = Spectrum::from_eigenvalues(eig).unwrap();
        prop_assert_eq!(count_spikes(&s, 0.0), 0);
    }

    #[test]
    fn kl_gradient_matches_finite_differences(eig in prop::collection::vec(-1.95f64..1.95, 8)) {
        let s = Spectrum::from_eigenvalues(eig).unwrap();
        let (_, grad) = kl_to_semicircle(&s, 0.5, 0.01).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            let mut plus = s.eigenvalues.clone();
            plus[i] += h;
            let mut minus = s.eigenvalues.clone();
            minus[i] -= h;
            let f = |v: Vec<f64>| {
                let sp = Spectrum { eigenvalues: v, eigenvectors: vec![], source_dim: 8 };
                kl_to_semicircle(&sp, 0.5, 0.01).unwrap().0
            };
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            let tol = 1e-6 * fd.abs().max(grad[i].abs()).max(1e-3);
            prop_assert!((fd - grad[i]).abs() <= tol, "i={} fd={} an={}", i, fd, grad[i]);
        }
    }
}
