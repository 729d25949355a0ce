//! Dense layers, small MLPs and flat parameter access.
//!
//! Everything here is f64 and batch-major: a batch is an `Array2` with one
//! sample (or token) per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Deterministic RNG for a named stream derived from a base seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Visitor-style access to every trainable array of a model.
///
/// Names are stable and are used as checkpoint keys.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, p| out.extend_from_slice(p));
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, p| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill_zero(&mut self) {
        self.visit_mut("", &mut |_, p| p.iter_mut().for_each(|v| *v = 0.0));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, p| ok &= p.iter().all(|v| v.is_finite()));
        ok
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    /// Weights ~ N(0, 1/fan_in), zero bias.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_simple_fn((n_out, n_in), || normal.sample(rng));
        Dense {
            weight,
            bias: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    /// Same as [`Dense::backward`] without the input gradient.
    pub fn backward_params(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

impl ParamSet for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "weight"), self.weight.as_slice().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.as_slice_mut().expect("standard layout"),
        );
        f(&join(prefix, "bias"), self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// Chain of dense layers with ReLU between them and a linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("non-empty mlp")
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            h = layer.forward(relu(&h).view());
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(input.view());
            inputs.push(input);
            if i + 1 < self.layers.len() {
                input = relu(&z);
            } else {
                input = Array2::zeros((0, 0));
            }
            pre.push(z);
        }
        MlpCache { inputs, pre }
    }

    /// Returns `dL/dx`; set `need_input_grad = false` to skip the first-layer product.
    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: Array2<f64>,
        grad: &mut Mlp,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i == 0 && !need_input_grad {
                layer.backward_params(cache.inputs[0].view(), d.view(), &mut grad.layers[0]);
                return None;
            }
            let mut dx = layer.backward(cache.inputs[i].view(), d.view(), &mut grad.layers[i]);
            if i > 0 {
                Zip::from(&mut dx)
                    .and(&cache.pre[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0
                        }
                    });
            }
            d = dx;
        }
        Some(d)
    }
}

impl ParamSet for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}
