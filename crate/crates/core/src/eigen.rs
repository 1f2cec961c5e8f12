//! Symmetric eigendecomposition (Householder tridiagonalization followed by
//! implicit QL) and the analytic backward pass through it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Spectrum, SymMatrix};

/// Gap below which the eigenvector backward pass refuses to run.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Gradient of a scalar loss with respect to a symmetric input matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenGrad {
    pub dl_dx: SymMatrix,
}

/// Full decomposition `x = U diag(lambda) U^T` with ascending eigenvalues.
///
/// Each eigenvector column is sign-normalized so its largest-magnitude entry is
/// positive.
pub fn eigh(x: &SymMatrix) -> Result<Spectrum> {
    let n = x.dim();
    let mut v = x.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e, true);
    tridiagonal_ql(n, &mut v, &mut d, &mut e, true)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0.0f64;
        for r in 0..n {
            let val = v[r * n + k];
            if val.abs() > pivot.abs() {
                pivot = val;
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[r * n + col] = sign * v[r * n + k];
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        source_dim: n,
    })
}

/// Ascending eigenvalues only; skips eigenvector accumulation.
pub fn eigvalsh(x: &SymMatrix) -> Result<Vec<f64>> {
    let n = x.dim();
    let mut v = x.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e, false);
    tridiagonal_ql(n, &mut v, &mut d, &mut e, false)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Eigenvalues only, wrapped as a spectrum with the identity basis.
pub fn eigvalsh_spectrum(x: &SymMatrix) -> Result<Spectrum> {
    Spectrum::from_eigenvalues(eigvalsh(x)?)
}

/// Backward pass for a loss that depends on eigenvalues only: `U diag(g) U^T`.
///
/// Valid for repeated eigenvalues, since the eigenvector term is absent.
pub fn eigh_backward_values(spectrum: &Spectrum, g: &[f64]) -> Result<EigenGrad> {
    Ok(EigenGrad {
        dl_dx: spectrum.compose(g)?,
    })
}

/// Backward pass including the eigenvector term.
///
/// With `M = U^T dL/dU` and `K_ij = 1 / (lambda_i - lambda_j)` off the diagonal,
/// returns `U ( sym(K^T o M) + diag(dL/dlambda) ) U^T`.
pub fn eigh_backward_full(
    spectrum: &Spectrum,
    g_values: &[f64],
    g_vectors: &[f64],
) -> Result<EigenGrad> {
    let n = spectrum.dim();
    if g_values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g_values.len(),
        });
    }
    if g_vectors.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: g_vectors.len(),
        });
    }
    let lam = &spectrum.eigenvalues;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (lam[i] - lam[j]).abs();
            if gap <= DEGENERATE_GAP {
                return Err(Error::DegenerateSpectrum { i, j, gap });
            }
        }
    }

    // M = U^T G
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..n)
                .map(|r| spectrum.vector_entry(r, i) * g_vectors[r * n + j])
                .sum();
        }
    }
    // inner = (K^T o M)_sym + diag(g_values); (K^T)_ij = 1 / (lambda_j - lambda_i)
    let mut inner = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            inner[i * n + j] = if i == j {
                g_values[i]
            } else {
                m[i * n + j] / (lam[j] - lam[i])
            };
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (inner[i * n + j] + inner[j * n + i]);
        }
    }
    // U sym U^T
    let mut tmp = vec![0.0; n * n];
    for r in 0..n {
        for j in 0..n {
            tmp[r * n + j] = (0..n)
                .map(|k| spectrum.vector_entry(r, k) * sym[k * n + j])
                .sum();
        }
    }
    let dl_dx = SymMatrix::from_lower_fn(n, |p, q| {
        (0..n)
            .map(|j| tmp[p * n + j] * spectrum.vector_entry(q, j))
            .sum()
    })?;
    Ok(EigenGrad { dl_dx })
}

/// Householder reduction of a symmetric matrix to tridiagonal form.
///
/// On exit `d` holds the diagonal and `e[1..]` the subdiagonal. When
/// `accumulate` is set, `v` holds the orthogonal transform.
/// Dot product with four independent accumulators so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64], accumulate: bool) {
    // Column-major view of the (symmetric) input so the inner loops, which run
    // down columns, touch contiguous memory. The basis is transposed back at the end.
    let at = |r: usize, c: usize| c * n + r;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                let col = &v[at(j + 1, j)..at(i, j)];
                g = e[j] + v[at(j, j)] * f + dot(col, &d[j + 1..i]);
                axpy(&mut e[j + 1..i], f, col);
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for ((x, ek), dk) in v[at(j, j)..at(i, j)].iter_mut().zip(&e[j..i]).zip(&d[j..i]) {
                    *x -= f * ek + g * dk;
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    if !accumulate {
        for j in 0..n {
            d[j] = v[at(j, j)];
        }
        e[0] = 0.0;
        return;
    }

    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let g = dot(&v[at(0, i + 1)..=at(i, i + 1)], &v[at(0, j)..=at(i, j)]);
                axpy(&mut v[at(0, j)..=at(i, j)], -g, &d[..=i]);
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            v.swap(r * n + c, c * n + r);
        }
    }
}

/// Implicit-shift QL iteration on the tridiagonal form.
fn tridiagonal_ql(
    n: usize,
    v: &mut [f64],
    d: &mut [f64],
    e: &mut [f64],
    vectors: bool,
) -> Result<()> {
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let max_iter = 60 * n.max(1);
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NoConvergence(max_iter));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if vectors {
                        for k in 0..n {
                            h = v[at(k, i + 1)];
                            v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                            v[at(k, i)] = c * v[at(k, i)] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
