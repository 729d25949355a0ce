//! Small nonlinear image codec shared by every user, plus the synthetic
//! 8×8 dataset it is trained on.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Mlp, MlpCache, ParamSet};

pub const IMAGE_SIDE: usize = 8;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Flattened 8×8 grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: [f64; IMAGE_PIXELS],
}

impl ImageSample {
    pub fn new(pixels: [f64; IMAGE_PIXELS]) -> Result<Self> {
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("pixel outside [0, 1]".into()));
        }
        Ok(ImageSample { pixels })
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.pixels[..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecDims {
    pub pixels: usize,
    pub hidden: usize,
    /// Real feature width; twice the number of complex channel symbols.
    pub feature: usize,
}

impl Default for CodecDims {
    fn default() -> Self {
        CodecDims {
            pixels: IMAGE_PIXELS,
            hidden: 128,
            feature: 64,
        }
    }
}

impl CodecDims {
    pub fn validate(&self) -> Result<()> {
        if self.pixels == 0 || self.hidden == 0 || self.feature == 0 {
            return Err(Error::InvalidConfig("codec dims must be positive".into()));
        }
        if !self.feature.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "feature width must be even, got {}",
                self.feature
            )));
        }
        Ok(())
    }

    /// Complex channel symbols per image.
    pub fn symbols(&self) -> usize {
        self.feature / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParameters {
    pub dims: CodecDims,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl CodecParameters {
    pub fn init(dims: CodecDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = seeded_rng(seed, 0xC0DEC);
        Ok(CodecParameters {
            dims,
            encoder: Mlp::init(&[dims.pixels, dims.hidden, dims.feature], &mut rng),
            decoder: Mlp::init(&[dims.feature, dims.hidden, dims.pixels], &mut rng),
        })
    }

    pub fn zeros(dims: CodecDims) -> Self {
        CodecParameters {
            dims,
            encoder: Mlp::zeros(&[dims.pixels, dims.hidden, dims.feature]),
            decoder: Mlp::zeros(&[dims.feature, dims.hidden, dims.pixels]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn encode_batch(&self, images: ArrayView2<f64>) -> Result<MlpCache> {
        let cache = self.encoder.forward_cached(images);
        finite(cache.output(), "encoder")?;
        Ok(cache)
    }

    pub fn decode_batch(&self, features: ArrayView2<f64>) -> Result<MlpCache> {
        let cache = self.decoder.forward_cached(features);
        finite(cache.output(), "decoder")?;
        Ok(cache)
    }
}

impl ParamSet for CodecParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.encoder.visit(&format!("{prefix}encoder"), f);
        self.decoder.visit(&format!("{prefix}decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&format!("{prefix}encoder"), f);
        self.decoder.visit_mut(&format!("{prefix}decoder"), f);
    }
}

fn finite(a: &Array2<f64>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

fn row(v: ArrayView1<f64>) -> Array2<f64> {
    v.to_owned().insert_axis(ndarray::Axis(0))
}

pub fn encode(image: ArrayView1<f64>, params: &CodecParameters) -> Result<Array1<f64>> {
    if image.len() != params.dims.pixels {
        return Err(Error::ShapeMismatch(format!(
            "image has {} pixels, codec expects {}",
            image.len(),
            params.dims.pixels
        )));
    }
    let out = params.encoder.forward(row(image).view());
    finite(&out, "encoder")?;
    Ok(out.row(0).to_owned())
}

/// Unclamped reconstruction.
pub fn decode(feature: ArrayView1<f64>, params: &CodecParameters) -> Result<Array1<f64>> {
    if feature.len() != params.dims.feature {
        return Err(Error::ShapeMismatch(format!(
            "feature has {} entries, codec expects {}",
            feature.len(),
            params.dims.feature
        )));
    }
    let out = params.decoder.forward(row(feature).view());
    finite(&out, "decoder")?;
    Ok(out.row(0).to_owned())
}

const DEGENERATE_NORM: f64 = 1e-12;

/// Average power per complex symbol (pairs of reals).
pub fn symbol_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / (x.len() as f64 / 2.0)
}

/// Rescales so the average power per complex symbol is one.
pub fn power_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM || x.len() < 2 {
        return Err(Error::DegenerateFeature);
    }
    let scale = (x.len() as f64 / 2.0).sqrt() / norm;
    Ok(x.iter().map(|v| v * scale).collect())
}

/// Gradient through [`power_normalize`]: `dx = s·(dy − x̂·(x̂·dy))` with
/// `s = √m/‖x‖` and `x̂ = x/‖x‖`.
pub fn power_normalize_backward(x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    let norm = norm2.sqrt();
    if norm < DEGENERATE_NORM {
        return Err(Error::DegenerateFeature);
    }
    let scale = (x.len() as f64 / 2.0).sqrt() / norm;
    let proj: f64 = x.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>() / norm2;
    Ok(x.iter()
        .zip(dy)
        .map(|(xi, di)| scale * (di - xi * proj))
        .collect())
}

/// Complex per-user features as they enter the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub users: Vec<Vec<Complex64>>,
}

impl FeatureBatch {
    pub fn symbols(&self) -> usize {
        self.users.first().map_or(0, Vec::len)
    }

    pub fn power(&self, user: usize) -> f64 {
        let z = &self.users[user];
        z.iter().map(|c| c.norm_sqr()).sum::<f64>() / z.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Blob,
    Bars,
    Checker,
}

fn draw_image<R: Rng + ?Sized>(rng: &mut R) -> ImageSample {
    let pattern = match rng.random_range(0..3) {
        0 => Pattern::Blob,
        1 => Pattern::Bars,
        _ => Pattern::Checker,
    };
    let mut px = [0.0; IMAGE_PIXELS];
    match pattern {
        Pattern::Blob => {
            let background = rng.random_range(0.0..0.3);
            let blobs = rng.random_range(1..=2);
            px.iter_mut().for_each(|p| *p = background);
            for _ in 0..blobs {
                let cx = rng.random_range(0.0..IMAGE_SIDE as f64 - 1.0);
                let cy = rng.random_range(0.0..IMAGE_SIDE as f64 - 1.0);
                let sigma = rng.random_range(0.9..2.2);
                let amp = rng.random_range(0.5..1.0);
                for (idx, p) in px.iter_mut().enumerate() {
                    let (r, c) = ((idx / IMAGE_SIDE) as f64, (idx % IMAGE_SIDE) as f64);
                    let d2 = (r - cy).powi(2) + (c - cx).powi(2);
                    *p += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        Pattern::Bars => {
            let background = rng.random_range(0.0..0.3);
            let level = rng.random_range(0.6..1.0);
            let vertical = rng.random_bool(0.5);
            let width = rng.random_range(1..=3);
            let start = rng.random_range(0..=IMAGE_SIDE - width);
            for (idx, p) in px.iter_mut().enumerate() {
                let (r, c) = (idx / IMAGE_SIDE, idx % IMAGE_SIDE);
                let coord = if vertical { c } else { r };
                *p = if (start..start + width).contains(&coord) {
                    level
                } else {
                    background
                };
            }
        }
        Pattern::Checker => {
            let cell = [2usize, 4][rng.random_range(0..2)];
            let phase = rng.random_range(0..2);
            let lo = rng.random_range(0.0..0.3);
            let hi = rng.random_range(0.7..1.0);
            for (idx, p) in px.iter_mut().enumerate() {
                let (r, c) = (idx / IMAGE_SIDE, idx % IMAGE_SIDE);
                *p = if (r / cell + c / cell + phase).is_multiple_of(2) {
                    hi
                } else {
                    lo
                };
            }
        }
    }
    px.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    ImageSample { pixels: px }
}

/// Deterministic mix of Gaussian blobs, bars and checkerboards.
pub fn synth_dataset(num_samples: usize, seed: u64) -> Vec<ImageSample> {
    let mut rng = seeded_rng(seed, 0xDA7A);
    (0..num_samples).map(|_| draw_image(&mut rng)).collect()
}

/// Draws `n` images from an existing RNG stream.
pub fn synth_images<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<ImageSample> {
    (0..n).map(|_| draw_image(rng)).collect()
}

/// Stacks images into an `n × 64` batch.
pub fn stack_images(images: &[ImageSample]) -> Array2<f64> {
    let mut out = Array2::zeros((images.len(), IMAGE_PIXELS));
    for (mut row, img) in out.rows_mut().into_iter().zip(images) {
        row.assign(&img.view());
    }
    out
}
