//! End-to-end multi-user pipeline, training loop and evaluation.
//!
//! One step: every user encodes its own image with the shared codec, the
//! transmit-side gating block modulates it with the user's codeword, features
//! are power-normalized and superposed by the channel, each receiver runs the
//! receive-side block with its codeword and decodes.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    complex_normal, pack_complex, snr_to_sigma2, transmit_adjoint, unpack_complex, ChannelKind,
    ChannelRealization,
};
use crate::codebook::{Codebook, Codeword};
use crate::error::{Error, Result};
use crate::losses::{total_loss_backward, BatchState, LossBreakdown, LossWeights};
use crate::metrics::{
    abs_cosine_matrix, angle_matrix, cosine_matrix, estimate_subspace, mean_off_diagonal, projection_power, psnr_from_mse,
    MetricsConfig,
};
use crate::nn::{seeded_rng, MlpCache, ParamSet};
use crate::nsm::{init_nsm, NsmActivations, NsmDims, NsmParameters};
use crate::optim::{Optimizer, OptimizerKind};
use crate::semcodec::{
    power_normalize, power_normalize_backward, stack_images, synth_images, CodecDims,
    CodecParameters,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub codec: CodecDims,
    pub nsm: NsmDims,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.nsm.validate()?;
        if self.codec.feature != self.nsm.sample_width() {
            return Err(Error::InvalidConfig(format!(
                "codec feature width {} must equal NSM tokens x channels = {}",
                self.codec.feature,
                self.nsm.sample_width()
            )));
        }
        Ok(())
    }
}

/// Encoder/decoder (`codec`), transmit-side block (`tx`) and receive-side
/// block (`rx`). One instance serves every user.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub codec: CodecParameters,
    pub tx: NsmParameters,
    pub rx: NsmParameters,
}

/// The parameter blocks and codeword one user's traffic passes through.
#[derive(Debug, Clone, Copy)]
pub struct UserRoute<'a> {
    pub codec: &'a CodecParameters,
    pub tx: &'a NsmParameters,
    pub rx: &'a NsmParameters,
    pub codeword: &'a Codeword,
}

impl ModelParameters {
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        Ok(ModelParameters {
            codec: CodecParameters::init(dims.codec, seed)?,
            tx: init_nsm(dims.nsm, seed.wrapping_add(1))?,
            rx: init_nsm(dims.nsm, seed.wrapping_add(2))?,
        })
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        ModelParameters {
            codec: CodecParameters::zeros(dims.codec),
            tx: NsmParameters::zeros(dims.nsm),
            rx: NsmParameters::zeros(dims.nsm),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            codec: self.codec.dims,
            nsm: self.tx.dims,
        }
    }

    pub fn route<'a>(&'a self, codebook: &'a Codebook, user: usize) -> UserRoute<'a> {
        UserRoute {
            codec: &self.codec,
            tx: &self.tx,
            rx: &self.rx,
            codeword: codebook.codeword(user),
        }
    }
}

impl ParamSet for ModelParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.codec.visit(&format!("{prefix}codec."), f);
        self.tx.visit(&format!("{prefix}tx."), f);
        self.rx.visit(&format!("{prefix}rx."), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.codec.visit_mut(&format!("{prefix}codec."), f);
        self.tx.visit_mut(&format!("{prefix}tx."), f);
        self.rx.visit_mut(&format!("{prefix}rx."), f);
    }
}

/// Everything random about one step, drawn up front so the forward pass is
/// a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct StepBatch {
    /// Per user, `batch × pixels`.
    pub images: Vec<Array2<f64>>,
    pub tx_codes: Vec<Vec<f64>>,
    pub rx_codes: Vec<Vec<f64>>,
    pub snr_db: f64,
    pub power: f64,
    /// One realization per batch item.
    pub channels: Vec<ChannelRealization>,
    /// Per receiver, `batch × feature` in I/Q-interleaved layout.
    pub noise: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchSpec {
    pub num_users: usize,
    pub batch_size: usize,
    pub snr_db: f64,
    pub kind: ChannelKind,
    pub power: f64,
    pub noiseless: bool,
}

impl StepBatch {
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        codebook: &Codebook,
        dims: &ModelDims,
        spec: &BatchSpec,
    ) -> Self {
        let n = spec.num_users;
        let b = spec.batch_size;
        let images = (0..n)
            .map(|_| stack_images(&synth_images(b, rng)))
            .collect();
        let channels = (0..b)
            .map(|_| ChannelRealization::draw_with(spec.kind, n, rng))
            .collect();
        let sigma2 = if spec.noiseless {
            0.0
        } else {
            snr_to_sigma2(spec.snr_db, spec.power)
        };
        let symbols = dims.codec.symbols();
        let noise = (0..n)
            .map(|_| {
                let mut a = Array2::zeros((b, dims.codec.feature));
                if sigma2 > 0.0 {
                    for mut row in a.rows_mut() {
                        for m in 0..symbols {
                            let c = complex_normal(rng, sigma2);
                            row[2 * m] = c.re;
                            row[2 * m + 1] = c.im;
                        }
                    }
                }
                a
            })
            .collect();
        let codes: Vec<Vec<f64>> = (0..n).map(|u| codebook.codeword(u).to_f64()).collect();
        StepBatch {
            images,
            tx_codes: codes.clone(),
            rx_codes: codes,
            snr_db: spec.snr_db,
            power: spec.power,
            channels,
            noise,
        }
    }

    pub fn num_users(&self) -> usize {
        self.images.len()
    }

    pub fn batch_size(&self) -> usize {
        self.images.first().map_or(0, |a| a.nrows())
    }
}

fn reshape(a: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), a.iter().copied().collect()).expect("element count")
}

/// Intermediates of a forward pass through the whole multi-user pipeline.
#[derive(Debug, Clone)]
pub struct StepForward {
    enc: Vec<MlpCache>,
    /// Encoder outputs as `(batch·tokens) × channels`.
    tx_in: Vec<Array2<f64>>,
    tx_acts: Vec<NsmActivations>,
    /// Post-modulation features, `batch × feature`.
    pub features: Vec<Array2<f64>>,
    /// Received signals as `(batch·tokens) × channels`.
    rx_in: Vec<Array2<f64>>,
    rx_acts: Vec<NsmActivations>,
    dec: Vec<MlpCache>,
}

impl StepForward {
    pub fn reconstruction(&self, user: usize) -> &Array2<f64> {
        self.dec[user].output()
    }
}

/// Noiseless superposition of one batch item's normalized features at
/// every receiver, in I/Q-interleaved layout.
fn superpose(rows: &[ArrayView1<f64>], ch: &ChannelRealization, power: f64) -> Vec<Array1<f64>> {
    let amp = power.sqrt();
    let n = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    (0..n)
        .map(|rx| {
            let mut y = Array1::zeros(width);
            for (tx, z) in rows.iter().enumerate() {
                let h = ch.gain(tx, rx) * amp;
                for m in 0..width / 2 {
                    let (re, im) = (z[2 * m], z[2 * m + 1]);
                    y[2 * m] += h.re * re - h.im * im;
                    y[2 * m + 1] += h.re * im + h.im * re;
                }
            }
            y
        })
        .collect()
}

pub fn forward(params: &ModelParameters, batch: &StepBatch) -> Result<StepForward> {
    let dims = params.dims();
    let (k, c) = (dims.nsm.tokens, dims.nsm.channels);
    let n = batch.num_users();
    let b = batch.batch_size();
    let f = dims.codec.feature;

    let mut enc = Vec::with_capacity(n);
    let mut tx_in = Vec::with_capacity(n);
    let mut tx_acts = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut normalized = Vec::with_capacity(n);
    for u in 0..n {
        let cache = params.codec.encode_batch(batch.images[u].view())?;
        let x = reshape(cache.output(), b * k, c);
        let (z, acts) = params.tx.forward(x.view(), &batch.tx_codes[u], batch.snr_db)?;
        let z = reshape(&z, b, f);
        let mut zn = Array2::zeros((b, f));
        for (mut out, row) in zn.rows_mut().into_iter().zip(z.rows()) {
            let v = power_normalize(row.as_slice().expect("contiguous row"))?;
            out.assign(&Array1::from(v));
        }
        enc.push(cache);
        tx_in.push(x);
        tx_acts.push(acts);
        features.push(z);
        normalized.push(zn);
    }

    let mut received: Vec<Array2<f64>> = batch.noise.to_vec();
    for item in 0..b {
        let rows: Vec<ArrayView1<f64>> = normalized.iter().map(|zn| zn.row(item)).collect();
        let y = superpose(&rows, &batch.channels[item], batch.power);
        for (rx, yv) in y.into_iter().enumerate() {
            let mut row = received[rx].row_mut(item);
            row += &yv;
        }
    }

    let mut rx_in = Vec::with_capacity(n);
    let mut rx_acts = Vec::with_capacity(n);
    let mut dec = Vec::with_capacity(n);
    for u in 0..n {
        let y = reshape(&received[u], b * k, c);
        let (xh, acts) = params.rx.forward(y.view(), &batch.rx_codes[u], batch.snr_db)?;
        let xh = reshape(&xh, b, f);
        dec.push(params.codec.decode_batch(xh.view())?);
        rx_in.push(y);
        rx_acts.push(acts);
    }
    Ok(StepForward {
        enc,
        tx_in,
        tx_acts,
        features,
        rx_in,
        rx_acts,
        dec,
    })
}

pub fn step_loss(
    batch: &StepBatch,
    fwd: &StepForward,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let state = batch_state(batch, fwd);
    crate::losses::total_loss(&state, weights)
}

fn batch_state<'a>(batch: &'a StepBatch, fwd: &'a StepForward) -> BatchState<'a> {
    BatchState {
        originals: batch.images.iter().map(|a| a.view()).collect(),
        reconstructions: fwd.dec.iter().map(|d| d.output().view()).collect(),
        features: fwd.features.iter().map(|a| a.view()).collect(),
    }
}

/// Loss and gradient of the weighted objective for one step.
pub fn forward_backward(
    params: &ModelParameters,
    batch: &StepBatch,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ModelParameters)> {
    let dims = params.dims();
    let (k, c) = (dims.nsm.tokens, dims.nsm.channels);
    let n = batch.num_users();
    let b = batch.batch_size();
    let f = dims.codec.feature;

    let fwd = forward(params, batch)?;
    let (breakdown, lg) = total_loss_backward(&batch_state(batch, &fwd), weights)?;
    let mut grads = params.zeros_like_model();

    let mut d_received = Vec::with_capacity(n);
    for u in 0..n {
        let d_xh = params
            .codec
            .decoder
            .backward(&fwd.dec[u], lg.reconstructions[u].clone(), &mut grads.codec.decoder, true)
            .expect("input gradient requested");
        let d_xh = reshape(&d_xh, b * k, c);
        let dy = params
            .rx
            .backward(fwd.rx_in[u].view(), &fwd.rx_acts[u], d_xh.view(), &mut grads.rx)?;
        d_received.push(reshape(&dy, b, f));
    }

    let mut d_norm: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros((b, f))).collect();
    for item in 0..b {
        let dy: Vec<_> = d_received
            .iter()
            .map(|d| pack_complex(d.row(item).as_slice().expect("contiguous row")))
            .collect::<Result<_>>()?;
        let dz = transmit_adjoint(&dy, &batch.channels[item], batch.power)?;
        for (u, g) in dz.iter().enumerate() {
            d_norm[u].row_mut(item).assign(&Array1::from(unpack_complex(g)));
        }
    }

    for u in 0..n {
        let mut dz = lg.features[u].clone();
        for item in 0..b {
            let z = fwd.features[u].row(item);
            let g = power_normalize_backward(
                z.as_slice().expect("contiguous row"),
                d_norm[u].row(item).as_slice().expect("contiguous row"),
            )?;
            let mut row = dz.row_mut(item);
            row += &ArrayView1::from(&g[..]);
        }
        let dz = reshape(&dz, b * k, c);
        let dx = params
            .tx
            .backward(fwd.tx_in[u].view(), &fwd.tx_acts[u], dz.view(), &mut grads.tx)?;
        let dx = reshape(&dx, b, f);
        params
            .codec
            .encoder
            .backward(&fwd.enc[u], dx, &mut grads.codec.encoder, false);
    }
    Ok((breakdown, grads))
}

impl ModelParameters {
    pub fn zeros_like_model(&self) -> Self {
        Self::zeros(&self.dims())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_steps")]
    pub steps_per_epoch: usize,
    pub num_users: usize,
    pub batch_size: usize,
    pub snr_range_db: [f64; 2],
    pub channel: ChannelKind,
    /// Zero noise on the channel; the NSM blocks still see the sampled SNR.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_power")]
    pub transmit_power: f64,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Batches used for the post-training evaluation in the report.
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
}

fn default_lr() -> f64 {
    1e-4
}

fn default_steps() -> usize {
    1
}

fn default_power() -> f64 {
    1.0
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::adam()
}

fn default_eval_batches() -> usize {
    4
}

impl TrainConfig {
    pub fn validate(&self, codebook: &Codebook) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be >= 1".into());
        }
        if self.num_users == 0 || self.num_users > codebook.num_users() {
            return bad(format!(
                "num_users N = {} must satisfy 1 <= N <= codebook K = {}",
                self.num_users,
                codebook.num_users()
            ));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_range_db must be finite with lo <= hi, got [{lo}, {hi}]"));
        }
        if !(self.transmit_power > 0.0) {
            return bad("transmit_power must be > 0".into());
        }
        self.channel.validate()?;
        self.weights.validate()
    }

    fn batch_spec(&self, snr_db: f64) -> BatchSpec {
        BatchSpec {
            num_users: self.num_users,
            batch_size: self.batch_size,
            snr_db,
            kind: self.channel,
            power: self.transmit_power,
            noiseless: self.noiseless,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss breakdown of each epoch.
    pub trace: Vec<LossBreakdown>,
    pub cosine_matrix: Vec<Vec<f64>>,
    pub mean_abs_cosine: f64,
    pub angle_matrix: Vec<Vec<f64>>,
    pub eval_user_mse: Vec<f64>,
    pub eval_snr_db: f64,
    pub train_seed: u64,
    pub eval_seed: u64,
    /// Complex channel symbols each user sends per image.
    pub symbols_per_image: usize,
    /// Excluded from serialized reports so they stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Stream ids for the independent RNG streams of a run.
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

pub fn train(
    cfg: &TrainConfig,
    dims: &ModelDims,
    codebook: &Codebook,
) -> Result<(ModelParameters, TrainReport)> {
    cfg.validate(codebook)?;
    dims.validate()?;
    if dims.nsm.code_len != codebook.length {
        return Err(Error::InvalidConfig(format!(
            "codebook length {} differs from NSM code length {}",
            codebook.length, dims.nsm.code_len
        )));
    }
    let start = Instant::now();
    let mut params = ModelParameters::init(dims, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.num_params());
    let mut rng = seeded_rng(cfg.seed, DATA_STREAM);
    let [lo, hi] = cfg.snr_range_db;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut acc = [0.0; 4];
        for _ in 0..cfg.steps_per_epoch {
            let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let batch = StepBatch::sample(&mut rng, codebook, dims, &cfg.batch_spec(snr));
            let (loss, grads) = match forward_backward(&params, &batch, &cfg.weights) {
                Ok(v) => v,
                Err(Error::NonFiniteActivation(_)) => {
                    return Err(Error::DivergenceDetected {
                        epoch,
                        loss: f64::NAN,
                        partial_trace: trace,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(Error::DivergenceDetected {
                    epoch,
                    loss: loss.total,
                    partial_trace: trace,
                });
            }
            acc[0] += loss.recon;
            acc[1] += loss.fair;
            acc[2] += loss.orth;
            acc[3] += loss.total;
            let mut flat = params.flatten();
            opt.step(&mut flat, &grads.flatten());
            params.assign(&flat);
        }
        let s = cfg.steps_per_epoch as f64;
        trace.push(LossBreakdown {
            recon: acc[0] / s,
            fair: acc[1] / s,
            orth: acc[2] / s,
            total: acc[3] / s,
        });
    }

    let eval_seed = cfg.seed.wrapping_add(EVAL_STREAM);
    let eval_snr = 0.5 * (lo + hi);
    let report = evaluate(
        &params,
        codebook,
        &EvalSpec {
            num_users: cfg.num_users,
            snr_grid: vec![eval_snr],
            kind: cfg.channel,
            num_batches: cfg.eval_batches,
            batch_size: cfg.batch_size,
            power: cfg.transmit_power,
            seed: eval_seed,
            metrics: MetricsConfig::default(),
        },
    )?;
    let point = &report.snr_points[0];
    Ok((
        params,
        TrainReport {
            trace,
            cosine_matrix: report.cosine_matrix.clone(),
            mean_abs_cosine: report.mean_abs_cosine,
            angle_matrix: report.angle_matrix.clone(),
            eval_user_mse: point.user_mse.clone(),
            eval_snr_db: eval_snr,
            train_seed: cfg.seed,
            eval_seed,
            symbols_per_image: dims.codec.symbols(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub num_users: usize,
    pub snr_grid: Vec<f64>,
    pub kind: ChannelKind,
    pub num_batches: usize,
    pub batch_size: usize,
    #[serde(default = "default_power")]
    pub power: f64,
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrMetrics {
    pub snr_db: f64,
    pub user_mse: Vec<f64>,
    /// Mean per-image PSNR of clamped reconstructions.
    pub user_psnr: Vec<f64>,
    pub mean_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub snr_points: Vec<SnrMetrics>,
    /// Pooled over every evaluated SNR.
    pub cosine_matrix: Vec<Vec<f64>>,
    pub abs_cosine_matrix: Vec<Vec<f64>>,
    /// Mean of `abs_cosine_matrix` over user pairs.
    pub mean_abs_cosine: f64,
    pub angle_matrix: Vec<Vec<f64>>,
    pub orth_loss: f64,
    /// `[i][j]`: mean projection power of unit-normalized user-i features on
    /// user j's subspace (diagonal: own subspace).
    pub projection_power: Vec<Vec<f64>>,
    pub subspace_rank: usize,
    pub symbols_per_image: usize,
    pub seed: u64,
}

struct Quality {
    mse_sum: f64,
    psnr_sum: f64,
    count: usize,
}

fn image_quality(original: ArrayView2<f64>, recon: &Array2<f64>, max_value: f64, q: &mut Quality) {
    for (s, r) in original.rows().into_iter().zip(recon.rows()) {
        let mse = s
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (a - b.clamp(0.0, 1.0)).powi(2))
            .sum::<f64>()
            / s.len() as f64;
        q.mse_sum += mse;
        q.psnr_sum += psnr_from_mse(mse, max_value);
        q.count += 1;
    }
}

fn unit_rows(a: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n < crate::losses::FEATURE_FLOOR {
            return Err(Error::DegenerateFeature);
        }
        row /= n;
    }
    Ok(out)
}

/// Per-SNR quality plus feature geometry. Parameters are only read.
pub fn evaluate(
    params: &ModelParameters,
    codebook: &Codebook,
    spec: &EvalSpec,
) -> Result<MetricsReport> {
    spec.metrics.validate()?;
    let dims = params.dims();
    let n = spec.num_users;
    if n == 0 || n > codebook.num_users() {
        return Err(Error::InvalidConfig(format!(
            "num_users {n} outside 1..={}",
            codebook.num_users()
        )));
    }
    let mut rng = seeded_rng(spec.seed, EVAL_STREAM);
    let mut pooled: Vec<Vec<Array2<f64>>> = vec![Vec::new(); n];
    let mut orth_sum = 0.0;
    let mut orth_count = 0usize;
    let mut snr_points = Vec::with_capacity(spec.snr_grid.len());
    let none = LossWeights {
        lambda_fair: 0.0,
        lambda_orth: 0.0,
    };
    for &snr in &spec.snr_grid {
        let mut q: Vec<Quality> = (0..n)
            .map(|_| Quality {
                mse_sum: 0.0,
                psnr_sum: 0.0,
                count: 0,
            })
            .collect();
        for _ in 0..spec.num_batches {
            let batch = StepBatch::sample(
                &mut rng,
                codebook,
                &dims,
                &BatchSpec {
                    num_users: n,
                    batch_size: spec.batch_size,
                    snr_db: snr,
                    kind: spec.kind,
                    power: spec.power,
                    noiseless: false,
                },
            );
            let fwd = forward(params, &batch)?;
            for u in 0..n {
                image_quality(
                    batch.images[u].view(),
                    fwd.reconstruction(u),
                    spec.metrics.psnr_max_value,
                    &mut q[u],
                );
                pooled[u].push(fwd.features[u].clone());
            }
            if n >= 2 {
                orth_sum += step_loss(&batch, &fwd, &none)?.orth;
                orth_count += 1;
            }
        }
        let user_mse: Vec<f64> = q.iter().map(|x| x.mse_sum / x.count as f64).collect();
        let user_psnr: Vec<f64> = q.iter().map(|x| x.psnr_sum / x.count as f64).collect();
        let mean_psnr = user_psnr.iter().sum::<f64>() / n as f64;
        snr_points.push(SnrMetrics {
            snr_db: snr,
            user_mse,
            user_psnr,
            mean_psnr,
        });
    }

    let stacked: Vec<Array2<f64>> = pooled
        .iter()
        .map(|chunks| {
            let views: Vec<ArrayView2<f64>> = chunks.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        })
        .collect();
    let views: Vec<ArrayView2<f64>> = stacked.iter().map(|a| a.view()).collect();
    let cosine = cosine_matrix(&views)?;
    let abs_cosine = abs_cosine_matrix(&views)?;
    let angles = angle_matrix(&cosine);

    let units = stacked.iter().map(unit_rows).collect::<Result<Vec<_>>>()?;
    let rank = spec.metrics.subspace_rank;
    let mut proj = vec![vec![0.0; n]; n];
    for j in 0..n {
        let sub = estimate_subspace(units[j].view(), rank, j + 1)?;
        for i in 0..n {
            let mut total = 0.0;
            for row in units[i].rows() {
                total += projection_power(row, &sub)?;
            }
            proj[i][j] = total / units[i].nrows() as f64;
        }
    }

    Ok(MetricsReport {
        snr_points,
        cosine_matrix: cosine,
        mean_abs_cosine: mean_off_diagonal(&abs_cosine),
        abs_cosine_matrix: abs_cosine,
        angle_matrix: angles,
        orth_loss: if orth_count > 0 {
            orth_sum / orth_count as f64
        } else {
            0.0
        },
        projection_power: proj,
        subspace_rank: rank,
        symbols_per_image: dims.codec.symbols(),
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchEntry {
    /// 1-based transmitting user.
    pub tx_user: usize,
    /// 1-based user whose codeword the receiver applies.
    pub rx_codeword: usize,
    pub mse: f64,
    pub psnr: f64,
}

/// Decodes user `tx_user`'s stream with the codeword of `rx_codeword` at its
/// receiver while every user transmits. Indices are 0-based.
#[allow(clippy::too_many_arguments)]
pub fn mismatch_eval(
    params: &ModelParameters,
    codebook: &Codebook,
    num_users: usize,
    tx_user: usize,
    rx_codeword: usize,
    snr_db: f64,
    kind: ChannelKind,
    num_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<MismatchEntry> {
    if tx_user >= num_users || rx_codeword >= codebook.num_users() || num_users > codebook.num_users() {
        return Err(Error::InvalidConfig(format!(
            "user indices ({tx_user}, {rx_codeword}) out of range for {num_users} users"
        )));
    }
    let dims = params.dims();
    let mut rng = seeded_rng(seed, EVAL_STREAM);
    let mut q = Quality {
        mse_sum: 0.0,
        psnr_sum: 0.0,
        count: 0,
    };
    for _ in 0..num_batches {
        let mut batch = StepBatch::sample(
            &mut rng,
            codebook,
            &dims,
            &BatchSpec {
                num_users,
                batch_size,
                snr_db,
                kind,
                power: 1.0,
                noiseless: false,
            },
        );
        batch.rx_codes[tx_user] = codebook.codeword(rx_codeword).to_f64();
        let fwd = forward(params, &batch)?;
        image_quality(
            batch.images[tx_user].view(),
            fwd.reconstruction(tx_user),
            1.0,
            &mut q,
        );
    }
    Ok(MismatchEntry {
        tx_user: tx_user + 1,
        rx_codeword: rx_codeword + 1,
        mse: q.mse_sum / q.count as f64,
        psnr: q.psnr_sum / q.count as f64,
    })
}

/// Full `N × N` grid of [`mismatch_eval`]; row = transmitting user.
#[allow(clippy::too_many_arguments)]
pub fn mismatch_grid(
    params: &ModelParameters,
    codebook: &Codebook,
    num_users: usize,
    snr_db: f64,
    kind: ChannelKind,
    num_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<MismatchEntry>>> {
    (0..num_users)
        .map(|i| {
            (0..num_users)
                .map(|j| {
                    mismatch_eval(
                        params, codebook, num_users, i, j, snr_db, kind, num_batches, batch_size,
                        seed,
                    )
                })
                .collect()
        })
        .collect()
}
