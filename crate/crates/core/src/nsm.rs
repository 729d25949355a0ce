//! Codeword- and SNR-conditioned gating block.
//!
//! The same structure serves as the transmit-side access mapping and the
//! receive-side detector; each side owns its own parameters.
//!
//! ```text
//! k_0 = FU_0(input)                        rows × M
//! a_j = FA_code_j(c)   b_j = FA_snr_j(snr)  1 × M, broadcast over rows
//! g_j = k_{j-1} ⊙ a_j ⊙ b_j
//! k_j = FU_j(g_j)                          rows × M (rows × C for j = depth)
//! output = input ⊙ σ(k_depth)
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::codebook::Codeword;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Dense, Mlp, MlpCache, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsmDims {
    /// Width `C` of the gated input/output.
    pub channels: usize,
    /// Latent width `M`.
    pub latent: usize,
    /// Codeword length `L`.
    pub code_len: usize,
    /// Number of fusion layers.
    pub depth: usize,
    /// Tokens `K` per sample.
    pub tokens: usize,
}

impl NsmDims {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.latent == 0
            || self.code_len == 0
            || self.depth == 0
            || self.tokens == 0
        {
            return Err(Error::InvalidConfig("NSM dims must all be positive".into()));
        }
        if !self.channels.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "NSM channel width must be even, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Reals per sample (`K·C`).
    pub fn sample_width(&self) -> usize {
        self.tokens * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsmLayer {
    pub fa_code: Mlp,
    pub fa_snr: Mlp,
    pub fu: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsmParameters {
    pub dims: NsmDims,
    pub fu0: Dense,
    pub layers: Vec<NsmLayer>,
}

fn layer_widths(dims: &NsmDims) -> ([usize; 4], [usize; 4]) {
    let m = dims.latent;
    ([dims.code_len, m, m, m], [1, m, m, m])
}

impl NsmParameters {
    pub fn zeros(dims: NsmDims) -> Self {
        let (code_w, snr_w) = layer_widths(&dims);
        let layers = (0..dims.depth)
            .map(|j| NsmLayer {
                fa_code: Mlp::zeros(&code_w),
                fa_snr: Mlp::zeros(&snr_w),
                fu: Dense::zeros(dims.latent, fu_out(&dims, j)),
            })
            .collect();
        NsmParameters {
            dims,
            fu0: Dense::zeros(dims.channels, dims.latent),
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }
}

fn fu_out(dims: &NsmDims, j: usize) -> usize {
    if j + 1 == dims.depth {
        dims.channels
    } else {
        dims.latent
    }
}

/// Weights ~ N(0, 1/fan_in), zero biases.
pub fn init_nsm(dims: NsmDims, seed: u64) -> Result<NsmParameters> {
    dims.validate()?;
    let mut rng = seeded_rng(seed, 0x25A);
    let (code_w, snr_w) = layer_widths(&dims);
    let fu0 = Dense::init(dims.channels, dims.latent, &mut rng);
    let layers = (0..dims.depth)
        .map(|j| NsmLayer {
            fa_code: Mlp::init(&code_w, &mut rng),
            fa_snr: Mlp::init(&snr_w, &mut rng),
            fu: Dense::init(dims.latent, fu_out(&dims, j), &mut rng),
        })
        .collect();
    Ok(NsmParameters { dims, fu0, layers })
}

impl ParamSet for NsmParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.fu0.visit(&format!("{prefix}fu0"), f);
        for (j, layer) in self.layers.iter().enumerate() {
            let p = format!("{prefix}layer{}", j + 1);
            layer.fa_code.visit(&format!("{p}.fa_code"), f);
            layer.fa_snr.visit(&format!("{p}.fa_snr"), f);
            layer.fu.visit(&format!("{p}.fu"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.fu0.visit_mut(&format!("{prefix}fu0"), f);
        for (j, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("{prefix}layer{}", j + 1);
            layer.fa_code.visit_mut(&format!("{p}.fa_code"), f);
            layer.fa_snr.visit_mut(&format!("{p}.fa_snr"), f);
            layer.fu.visit_mut(&format!("{p}.fu"), f);
        }
    }
}

/// Intermediates of one forward pass. `a` and `b` are per-layer latent
/// vectors shared by every row.
#[derive(Debug, Clone)]
pub struct NsmActivations {
    pub k: Vec<Array2<f64>>,
    pub g: Vec<Array2<f64>>,
    pub a: Vec<Array1<f64>>,
    pub b: Vec<Array1<f64>>,
    pub gate: Array2<f64>,
    code_cache: Vec<MlpCache>,
    snr_cache: Vec<MlpCache>,
}

/// Scalar fed to the SNR branch: `1 + snr_db / 20`. Keeps the per-layer
/// gain of the multiplicative chain near one across 0–20 dB; raw dB makes a
/// deep chain vanish at 0 dB and blow up at 15 dB.
pub fn snr_input(snr_db: f64) -> f64 {
    1.0 + snr_db / SNR_INPUT_SPAN_DB
}

pub const SNR_INPUT_SPAN_DB: f64 = 20.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ensure_finite(a: &Array2<f64>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

impl NsmParameters {
    fn check_input(&self, input: &ArrayView2<f64>, code_len: usize) -> Result<()> {
        let d = &self.dims;
        if code_len != d.code_len {
            return Err(Error::ShapeMismatch(format!(
                "codeword length {code_len}, expected {}",
                d.code_len
            )));
        }
        if input.ncols() != d.channels || input.nrows() == 0 || !input.nrows().is_multiple_of(d.tokens) {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} is not a stack of {}x{} samples",
                input.nrows(),
                input.ncols(),
                d.tokens,
                d.channels
            )));
        }
        Ok(())
    }

    /// Runs the block on `rows × C` input (any whole number of samples)
    /// conditioned on one codeword and one SNR.
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        codeword: &[f64],
        snr_db: f64,
    ) -> Result<(Array2<f64>, NsmActivations)> {
        self.check_input(&input, codeword.len())?;
        let code = ndarray::Array2::from_shape_vec((1, codeword.len()), codeword.to_vec())
            .expect("row vector");
        let snr = ndarray::arr2(&[[snr_input(snr_db)]]);

        let depth = self.layers.len();
        let mut k = Vec::with_capacity(depth + 1);
        let mut g = Vec::with_capacity(depth);
        let mut a = Vec::with_capacity(depth);
        let mut b = Vec::with_capacity(depth);
        let mut code_cache = Vec::with_capacity(depth);
        let mut snr_cache = Vec::with_capacity(depth);

        k.push(self.fu0.forward(input));
        for layer in &self.layers {
            let cc = layer.fa_code.forward_cached(code.view());
            let sc = layer.fa_snr.forward_cached(snr.view());
            let aj = cc.output().row(0).to_owned();
            let bj = sc.output().row(0).to_owned();
            let ab = &aj * &bj;
            let gj = k.last().unwrap() * &ab;
            let kj = layer.fu.forward(gj.view());
            ensure_finite(&kj, "nsm fusion")?;
            a.push(aj);
            b.push(bj);
            g.push(gj);
            k.push(kj);
            code_cache.push(cc);
            snr_cache.push(sc);
        }
        let gate = k.last().unwrap().mapv(sigmoid);
        let output = &input * &gate;
        ensure_finite(&output, "nsm output")?;
        Ok((
            output,
            NsmActivations {
                k,
                g,
                a,
                b,
                gate,
                code_cache,
                snr_cache,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dinput`.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        acts: &NsmActivations,
        upstream: ArrayView2<f64>,
        grads: &mut NsmParameters,
    ) -> Result<Array2<f64>> {
        if upstream.dim() != input.dim() || acts.gate.dim() != input.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} vs input {:?}",
                upstream.dim(),
                input.dim()
            )));
        }
        let mut d_input = &upstream * &acts.gate;
        let mut dk = Array2::zeros(input.dim());
        Zip::from(&mut dk)
            .and(&upstream)
            .and(&input)
            .and(&acts.gate)
            .for_each(|d, &u, &x, &s| *d = u * x * s * (1.0 - s));

        for j in (0..self.layers.len()).rev() {
            let layer = &self.layers[j];
            let gl = &mut grads.layers[j];
            let dg = layer.fu.backward(acts.g[j].view(), dk.view(), &mut gl.fu);
            let k_prev = &acts.k[j];
            // dg ⊙ k_{j-1}, reduced over rows, feeds both conditioning branches
            let dgk = (&dg * k_prev).sum_axis(Axis(0));
            let da = &dgk * &acts.b[j];
            let db = &dgk * &acts.a[j];
            layer.fa_code.backward(
                &acts.code_cache[j],
                da.insert_axis(Axis(0)),
                &mut gl.fa_code,
                false,
            );
            layer.fa_snr.backward(
                &acts.snr_cache[j],
                db.insert_axis(Axis(0)),
                &mut gl.fa_snr,
                false,
            );
            let ab = &acts.a[j] * &acts.b[j];
            dk = dg * &ab;
        }
        d_input += &self.fu0.backward(input, dk.view(), &mut grads.fu0);
        Ok(d_input)
    }
}

pub fn nsm_forward(
    input: ArrayView2<f64>,
    codeword: &Codeword,
    snr_db: f64,
    params: &NsmParameters,
) -> Result<(Array2<f64>, NsmActivations)> {
    params.forward(input, &codeword.to_f64(), snr_db)
}

/// Parameter and input gradients of a scalar loss whose gradient with
/// respect to the block output is `upstream`.
pub fn nsm_backward(
    input: ArrayView2<f64>,
    codeword: &Codeword,
    snr_db: f64,
    params: &NsmParameters,
    upstream: ArrayView2<f64>,
) -> Result<(NsmParameters, Array2<f64>)> {
    let (_, acts) = nsm_forward(input, codeword, snr_db, params)?;
    let mut grads = params.zeros_like();
    let d_input = params.backward(input, &acts, upstream, &mut grads)?;
    Ok((grads, d_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn dims() -> NsmDims {
        NsmDims {
            channels: 4,
            latent: 6,
            code_len: 8,
            depth: 2,
            tokens: 2,
        }
    }

    fn codeword() -> Codeword {
        Codeword {
            elements: vec![1, -1, 1, 1, -1, -1, 1, -1],
            user_index: 1,
        }
    }

    fn input() -> Array2<f64> {
        Array2::from_shape_fn((2, 4), |(r, c)| 0.3 * r as f64 - 0.2 * c as f64 + 0.1)
    }

    fn force_final(params: &mut NsmParameters, value: f64) {
        let last = params.layers.last_mut().unwrap();
        last.fu.weight.fill(0.0);
        last.fu.bias.fill(value);
    }

    #[test]
    fn saturated_gate_passes_input() {
        let mut p = init_nsm(dims(), 1).unwrap();
        force_final(&mut p, 40.0);
        let x = input();
        let (out, acts) = nsm_forward(x.view(), &codeword(), 5.0, &p).unwrap();
        for (o, i) in out.iter().zip(x.iter()) {
            assert!((o - i).abs() <= 1e-15);
        }
        assert!(acts.gate.iter().all(|&s| s > 0.0 && s <= 1.0));
    }

    #[test]
    fn zero_gate_logit_halves_input() {
        let mut p = init_nsm(dims(), 1).unwrap();
        force_final(&mut p, 0.0);
        let x = input();
        let (out, _) = nsm_forward(x.view(), &codeword(), 5.0, &p).unwrap();
        assert_eq!(out, &x / 2.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = init_nsm(dims(), 4).unwrap();
        let x = Array2::zeros((2, 4));
        for snr in [-5.0, 0.0, 17.0] {
            let (out, _) = nsm_forward(x.view(), &codeword(), snr, &p).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_nsm(dims(), 9).unwrap();
        let b = init_nsm(dims(), 9).unwrap();
        assert_eq!(a, b);
        let one = init_nsm(NsmDims { depth: 1, ..dims() }, 9).unwrap();
        assert_eq!(one.layers.len(), 1);
        assert_eq!(one.fu0.weight.dim(), (6, 4));
        assert_eq!(one.layers[0].fu.weight.dim(), (4, 6));
        assert_eq!(one.layers[0].fa_code.layers.len(), 3);
        assert_eq!(one.layers[0].fa_snr.layers.len(), 3);
    }

    #[test]
    fn shape_errors() {
        let p = init_nsm(dims(), 1).unwrap();
        let bad = Array2::zeros((2, 3));
        assert!(matches!(
            nsm_forward(bad.view(), &codeword(), 0.0, &p),
            Err(Error::ShapeMismatch(_))
        ));
        let short = Codeword {
            elements: vec![1, 1],
            user_index: 1,
        };
        assert!(matches!(
            nsm_forward(input().view(), &short, 0.0, &p),
            Err(Error::ShapeMismatch(_))
        ));
        let odd_rows = Array2::zeros((3, 4));
        assert!(nsm_forward(odd_rows.view(), &codeword(), 0.0, &p).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_nsm(dims(), 2).unwrap();
        let x = input();
        let up = Array2::zeros((2, 4));
        let (g, dx) = nsm_backward(x.view(), &codeword(), 3.0, &p, up.view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gate_blocks_logit_gradient() {
        let mut p = init_nsm(dims(), 2).unwrap();
        force_final(&mut p, 40.0);
        let x = input();
        let up = Array2::ones((2, 4));
        let (g, _) = nsm_backward(x.view(), &codeword(), 3.0, &p, up.view()).unwrap();
        let last = g.layers.last().unwrap();
        assert!(last.fu.bias.iter().all(|v| v.abs() < 1e-15));
    }
}
