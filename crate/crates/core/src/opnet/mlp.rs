//! Fully connected layers with batched forward/backward passes.

use crate::linalg::{gemm_acc, gemm_nt_acc, Mat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    ReLU,
    Tanh,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    /// Derivative in terms of the pre-activation value. The GELU form
    /// differentiates the same tanh approximation used forward.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

/// One dense layer. Weights are stored input-major (`fan_in x fan_out`) so
/// the batched forward pass is a plain row-major GEMM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Multilayer perceptron: hidden layers share one activation, the output
/// layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer activations retained by a cached forward pass.
pub struct MlpCache {
    /// Input to each layer (the batch for layer 0).
    pub inputs: Vec<Mat>,
    /// Pre-activation outputs of each layer.
    pub preacts: Vec<Mat>,
}

/// Gradient accumulator shaped like the owning [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.data_mut().fill(0.0);
            b.fill(0.0);
        }
    }
}

impl Mlp {
    /// Xavier-uniform initialization over the given layer dimensions
    /// (input, hidden..., output).
    pub fn new_seeded(dims: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: Mat::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit)),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.rows()];
        d.extend(self.layers.iter().map(|l| l.w.cols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }

    fn layer_forward(&self, layer: &Layer, x: &Mat) -> Mat {
        let mut z = Mat::zeros(x.rows(), layer.w.cols());
        for i in 0..z.rows() {
            z.row_mut(i).copy_from_slice(&layer.b);
        }
        gemm_acc(&mut z, x, &layer.w);
        z
    }

    /// Batched forward: rows of `x` are samples.
    pub fn forward(&self, x: &Mat) -> Mat {
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.layer_forward(layer, &a);
            if l != last {
                for v in z.data_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        a
    }

    /// Forward pass that retains what backward needs.
    pub fn forward_cached(&self, x: &Mat) -> (Mat, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(a.clone());
            let z = self.layer_forward(layer, &a);
            cache.preacts.push(z.clone());
            a = z;
            if l != last {
                for v in a.data_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        (a, cache)
    }

    /// Reverse pass. `d_out` is the loss gradient at the (linear) output;
    /// parameter gradients accumulate into `grads`. Returns the gradient
    /// with respect to the input batch when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &Mat,
        grads: &mut MlpGrads,
        want_input_grad: bool,
    ) -> Option<Mat> {
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            // db += column sums of delta
            {
                let (_, db) = &mut grads.layers[l];
                for i in 0..delta.rows() {
                    let row = delta.row(i);
                    for (bj, rj) in db.iter_mut().zip(row) {
                        *bj += rj;
                    }
                }
            }
            // dW += input^T delta
            {
                let input_t = input.transpose();
                let (dw, _) = &mut grads.layers[l];
                gemm_acc(dw, &input_t, &delta);
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            // d_input = delta W^T, then through the previous activation
            let mut d_in = Mat::zeros(delta.rows(), self.layers[l].w.rows());
            gemm_nt_acc(&mut d_in, &delta, &self.layers[l].w);
            if l == 0 {
                return Some(d_in);
            }
            let z_prev = &cache.preacts[l - 1];
            for (dv, zv) in d_in.data_mut().iter_mut().zip(z_prev.data()) {
                *dv *= self.activation.derivative(*zv);
            }
            delta = d_in;
        }
        unreachable!()
    }

    pub fn flatten_params_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
    }

    /// Load parameters from a flat slice in flatten order; returns the
    /// number of values consumed.
    pub fn load_params(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for layer in &mut self.layers {
            let wlen = layer.w.rows() * layer.w.cols();
            layer.w.data_mut().copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            layer.b.copy_from_slice(&flat[off..off + layer.b.len()]);
            off += layer.b.len();
        }
        off
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for layer in &mut self.layers {
            f(layer.w.data_mut());
            f(&mut layer.b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }
}

impl MlpGrads {
    pub fn for_each(&self, f: &mut impl FnMut(&[f64])) {
        for (w, b) in &self.layers {
            f(w.data());
            f(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn param_count_small_layer() {
        // 2 -> 3 single layer: 6 weights + 3 biases.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new_seeded(&[2, 3], Activation::Tanh, &mut rng);
        assert_eq!(mlp.param_count(), 9);
    }

    #[test]
    fn linear_single_layer_matches_manual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new_seeded(&[3, 2], Activation::ReLU, &mut rng);
        let x = Mat::new(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let y = mlp.forward(&x);
        for s in 0..2 {
            for j in 0..2 {
                let mut expect = mlp.layers[0].b[j];
                for i in 0..3 {
                    expect += x[(s, i)] * mlp.layers[0].w[(i, j)];
                }
                assert!((y[(s, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((Activation::Gelu.derivative(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn roundtrip_flatten_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new_seeded(&[4, 8, 3], Activation::Tanh, &mut rng);
        let mut flat = Vec::new();
        mlp.flatten_params_into(&mut flat);
        let mut other = Mlp::new_seeded(&[4, 8, 3], Activation::Tanh, &mut rng);
        let used = other.load_params(&flat);
        assert_eq!(used, flat.len());
        let x = Mat::new(1, 4, vec![0.1, -0.2, 0.3, 0.4]);
        let d = mlp.forward(&x).sub(&other.forward(&x));
        assert_eq!(d.max_abs(), 0.0);
    }
}
