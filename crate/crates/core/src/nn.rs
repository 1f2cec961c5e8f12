//! Small fully connected networks with hand-written reverse mode and Adam.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation; relu uses 0 at 0.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Row-major batch of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Network parameters. `weights[l]` is `out x in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: `inputs[0]` is the network input.
    inputs: Vec<Batch>,
    /// Pre-activations of every layer.
    pre: Vec<Batch>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(invalid("a network needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated at construction")
    }

    /// Checks that the stored tensors chain and are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.weights.len() != self.layer_sizes.len() - 1 {
            return Err(invalid("layer count does not match layer_sizes"));
        }
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] {
                return Err(Error::DimensionMismatch {
                    expected: w[0] * w[1],
                    got: self.weights[l].len(),
                });
            }
            if self.biases.get(l).map(Vec::len) != Some(w[1]) {
                return Err(invalid(format!("bias {l} has the wrong length")));
            }
        }
        if self.tensors().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// Parameter tensors in a fixed order (w0, b0, w1, b1, ...).
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Vec::len).sum()
    }

    pub fn forward(&self, input: &Batch) -> Result<(Batch, ForwardCache)> {
        if input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.cols,
            });
        }
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut x = input.clone();
        for l in 0..self.num_layers() {
            let z = self.affine(l, &x);
            let a = if l == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.data.iter_mut().for_each(|v| *v = self.activation.apply(*v));
                a
            };
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok((x, ForwardCache { inputs, pre }))
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, input: &Batch) -> Result<Batch> {
        if input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.cols,
            });
        }
        let mut x = self.affine(0, input);
        for l in 1..self.num_layers() {
            x.data.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            x = self.affine(l, &x);
        }
        Ok(x)
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let b = Batch {
            rows: 1,
            cols: input.len(),
            data: input.to_vec(),
        };
        Ok(self.predict(&b)?.data)
    }

    fn affine(&self, l: usize, x: &Batch) -> Batch {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.weights[l];
        let b = &self.biases[l];
        let mut out = Batch::zeros(x.rows, n_out);
        for r in 0..x.rows {
            let xr = x.row(r);
            let orow = out.row_mut(r);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                orow[o] = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        out
    }

    /// Reverse pass. Returns parameter gradients (shaped like `self`) and the
    /// gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, dl_dout: &Batch) -> Result<(MlpParams, Batch)> {
        let last = self.num_layers() - 1;
        let rows = cache.inputs[0].rows;
        if dl_dout.cols != self.output_dim() || dl_dout.rows != rows {
            return Err(Error::DimensionMismatch {
                expected: rows * self.output_dim(),
                got: dl_dout.rows * dl_dout.cols,
            });
        }
        let mut grads = self.zeros_like();
        let mut delta = dl_dout.clone();
        for l in (0..=last).rev() {
            if l != last {
                for (d, &z) in delta.data.iter_mut().zip(&cache.pre[l].data) {
                    *d *= self.activation.derivative(z);
                }
            }
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let x = &cache.inputs[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for r in 0..rows {
                let dr = delta.row(r);
                let xr = x.row(r);
                for o in 0..n_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let g = &mut gw[o * n_in..(o + 1) * n_in];
                    for (gi, xi) in g.iter_mut().zip(xr) {
                        *gi += d * xi;
                    }
                }
            }
            let w = &self.weights[l];
            let mut prev = Batch::zeros(rows, n_in);
            for r in 0..rows {
                let dr = delta.row(r);
                let pr = prev.row_mut(r);
                for o in 0..n_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in pr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &MlpParams) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &MlpParams) -> f64 {
        self.tensors()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort without
/// touching the parameters.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || state.m.len() != params.weights.len() * 2 {
        return Err(invalid("gradient or optimizer state shape does not match parameters"));
    }
    if grads.tensors().any(|t| t.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFinite("gradient entry".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bounds_and_determinism() {
        let p = MlpParams::init(&[2, 1], Activation::Relu, 4).unwrap();
        let bound = (6.0f64 / 3.0).sqrt();
        assert_eq!(p.weights[0].len(), 2);
        assert!(p.weights[0].iter().all(|w| w.abs() <= bound));
        assert_eq!(p.biases[0], vec![0.0]);
        assert_eq!(p, MlpParams::init(&[2, 1], Activation::Relu, 4).unwrap());
        let q = MlpParams::init(&[2, 1], Activation::Relu, 5).unwrap();
        assert!(p.max_abs_diff(&q) > 0.0);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(MlpParams::init(&[3], Activation::Relu, 0).is_err());
        assert!(MlpParams::init(&[3, 0, 1], Activation::Relu, 0).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = MlpParams {
            layer_sizes: vec![2, 2],
            activation: Activation::Relu,
            weights: vec![vec![1.0, 0.0, 0.0, 1.0]],
            biases: vec![vec![0.0, 0.0]],
        };
        let x = Batch::from_rows(&[vec![-1.5, 2.0]]).unwrap();
        let (y, _) = p.forward(&x).unwrap();
        assert_eq!(y.data, vec![-1.5, 2.0]);
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let p = MlpParams {
            layer_sizes: vec![1, 1, 1],
            activation: Activation::Relu,
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
        };
        let y = p.predict_one(&[-3.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let p = MlpParams::init(&[3, 1], Activation::Relu, 1).unwrap();
        let x = Batch::from_rows(&[vec![0.5, -2.0, 4.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (g, dx) = p.backward(&cache, &Batch::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_eq!(g.weights[0], vec![0.5, -2.0, 4.0]);
        assert_eq!(g.biases[0], vec![1.0]);
        assert_eq!(dx.data, p.weights[0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = MlpParams::init(&[3, 8, 2], Activation::Tanh, 2).unwrap();
        let x = Batch::from_rows(&[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (g, dx) = p.backward(&cache, &Batch::zeros(2, 2)).unwrap();
        assert!(g.tensors().all(|t| t.iter().all(|v| *v == 0.0)));
        assert!(dx.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let p = MlpParams::init(&[3, 4, 1], Activation::Relu, 0).unwrap();
        assert!(p.forward(&Batch::zeros(1, 2)).is_err());
        let (_, cache) = p.forward(&Batch::zeros(2, 3)).unwrap();
        assert!(p.backward(&cache, &Batch::zeros(2, 3)).is_err());
    }

    #[test]
    fn adam_zero_grad_and_first_step() {
        let mut p = MlpParams::init(&[2, 3], Activation::Relu, 0).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);

        let mut p = before.clone();
        let mut st = AdamState::new(&p, 1e-3);
        let mut g = p.zeros_like();
        g.weights[0] = vec![0.5, -2.0, 3.0, -0.1, 1e-3, -7.0];
        adam_step(&mut p, &g, &mut st).unwrap();
        for (i, gi) in g.weights[0].iter().enumerate() {
            let moved = p.weights[0][i] - before.weights[0][i];
            assert!((moved + 1e-3 * gi.signum()).abs() < 1e-7, "{moved}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = MlpParams::init(&[2, 1], Activation::Relu, 0).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p, 1e-3);
        let mut g = p.zeros_like();
        g.biases[0][0] = f64::NAN;
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(p, before);
    }
}
