//! Dense symmetric matrices and their spectra.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense real symmetric matrix, stored row-major.
///
/// Every constructor mirrors the lower triangle into the upper one, so
/// `get(p, q) == get(q, p)` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("matrix dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            data: vec![0.0; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = d;
        }
        Ok(m)
    }

    /// Builds a matrix by evaluating `f(p, q)` on the lower triangle (`p >= q`).
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for p in 0..dim {
            for q in 0..=p {
                let v = f(p, q);
                m.data[p * dim + q] = v;
                m.data[q * dim + p] = v;
            }
        }
        Ok(m)
    }

    /// Accepts a full row-major matrix whose asymmetry is within `1e-9` relative
    /// to its largest entry; the lower triangle is kept.
    pub fn from_dense(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        let scale = data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let mut worst = 0.0f64;
        for p in 0..dim {
            for q in 0..p {
                worst = worst.max((data[p * dim + q] - data[q * dim + p]).abs() / scale);
            }
        }
        if worst > 1e-9 {
            return Err(Error::NotSymmetric(worst));
        }
        Self::from_lower_fn(dim, |p, q| data[p * dim + q])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut flat = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::from_dense(dim, &flat)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.data[p * self.dim + q]
    }

    /// Sets both `(p, q)` and `(q, p)`.
    pub fn set(&mut self, p: usize, q: usize, v: f64) {
        self.data[p * self.dim + q] = v;
        self.data[q * self.dim + p] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors.
///
/// `eigenvectors` is row-major `D x D`; column `k` pairs with `eigenvalues[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<f64>,
    pub source_dim: usize,
}

impl Spectrum {
    /// A spectrum known only by its eigenvalues, paired with the identity basis.
    /// Useful for evaluating spectral functionals on synthetic eigenvalues.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("spectrum must be nonempty"));
        }
        eigenvalues.sort_by(f64::total_cmp);
        let d = eigenvalues.len();
        let mut eigenvectors = vec![0.0; d * d];
        for i in 0..d {
            eigenvectors[i * d + i] = 1.0;
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            source_dim: d,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.source_dim
    }

    /// Entry `(row, k)` of the eigenvector matrix.
    #[inline]
    pub fn vector_entry(&self, row: usize, k: usize) -> f64 {
        self.eigenvectors[row * self.source_dim + k]
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        (0..self.source_dim).map(|r| self.vector_entry(r, k)).collect()
    }

    /// `U diag(values) U^T`, the matrix with these eigenvectors and new eigenvalues.
    pub fn compose(&self, values: &[f64]) -> Result<SymMatrix> {
        let d = self.source_dim;
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.len(),
            });
        }
        SymMatrix::from_lower_fn(d, |p, q| {
            (0..d)
                .map(|k| self.vector_entry(p, k) * values[k] * self.vector_entry(q, k))
                .sum()
        })
    }

    /// `max |U^T U - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.source_dim;
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d)
                    .map(|r| self.vector_entry(r, a) * self.vector_entry(r, b))
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// `max |U Lambda U^T - x|`.
    pub fn reconstruction_error(&self, x: &SymMatrix) -> f64 {
        match self.compose(&self.eigenvalues) {
            Ok(r) => r
                .as_slice()
                .iter()
                .zip(x.as_slice())
                .fold(0.0, |a, (u, v)| a.max((u - v).abs())),
            Err(_) => f64::INFINITY,
        }
    }
}
