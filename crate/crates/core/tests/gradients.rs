use ndarray::Array2;
use nocsim::channel::ChannelKind;
use nocsim::codebook::{generate_noc, NocGenConfig};
use nocsim::losses::{grad_check, grad_check_at, LossWeights};
use nocsim::nn::{seeded_rng, Dense, Mlp, ParamSet};
use nocsim::nsm::{init_nsm, nsm_backward, nsm_forward, NsmDims, NsmParameters};
use nocsim::semcodec::{CodecDims, CodecParameters};
use nocsim::trainer::{forward, forward_backward, step_loss, BatchSpec, ModelDims, ModelParameters, StepBatch};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-5;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed, 77);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn small_nsm() -> NsmDims {
    NsmDims {
        channels: 4,
        latent: 6,
        code_len: 8,
        depth: 2,
        tokens: 2,
    }
}

/// Scalar probe loss `Σ output ⊙ w`, whose upstream gradient is `w`.
fn nsm_probe_loss(params: &NsmParameters, input: &Array2<f64>, code: &nocsim::codebook::Codeword, snr: f64, w: &Array2<f64>) -> f64 {
    let (out, _) = nsm_forward(input.view(), code, snr, params).unwrap();
    (&out * w).sum()
}

#[test]
fn nsm_parameter_gradients_match_central_differences() {
    let book = generate_noc(&NocGenConfig::new(8, 2, 60.0)).unwrap();
    let code = book.codeword(1).clone();
    let dims = small_nsm();
    let params = init_nsm(dims, 5).unwrap();
    let input = gaussian(dims.tokens, dims.channels, 1);
    let w = gaussian(dims.tokens, dims.channels, 2);
    let snr = 7.0;

    let (grads, _) = nsm_backward(input.view(), &code, snr, &params, w.view()).unwrap();
    let point = params.flatten();
    let analytic = grads.flatten();
    let mut rng = seeded_rng(3, 0);
    let probes = sample(&mut rng, point.len(), 100).into_vec();
    let err = grad_check_at(
        |p| {
            let mut q = params.clone();
            q.assign(p);
            nsm_probe_loss(&q, &input, &code, snr, &w)
        },
        &analytic,
        &point,
        STEP,
        &probes,
    );
    assert!(err < TOL, "worst relative error {err}");
}

#[test]
fn nsm_input_gradient_matches_central_differences() {
    let book = generate_noc(&NocGenConfig::new(8, 3, 70.0)).unwrap();
    let code = book.codeword(2).clone();
    let dims = small_nsm();
    let params = init_nsm(dims, 8).unwrap();
    let input = gaussian(2 * dims.tokens, dims.channels, 4);
    let w = gaussian(2 * dims.tokens, dims.channels, 5);

    let (_, d_input) = nsm_backward(input.view(), &code, 12.0, &params, w.view()).unwrap();
    let err = grad_check(
        |p| {
            let x = Array2::from_shape_vec(input.dim(), p.to_vec()).unwrap();
            nsm_probe_loss(&params, &x, &code, 12.0, &w)
        },
        d_input.as_slice().unwrap(),
        input.as_slice().unwrap(),
        STEP,
    );
    assert!(err < TOL, "worst relative error {err}");
}

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = seeded_rng(9, 0);
    let mlp = Mlp::init(&[6, 5, 4], &mut rng);
    let x = gaussian(3, 6, 10);
    let w = gaussian(3, 4, 11);
    let cache = mlp.forward_cached(x.view());
    let mut grads = Mlp::zeros(&[6, 5, 4]);
    let dx = mlp.backward(&cache, w.clone(), &mut grads, true).unwrap();

    let err = grad_check(
        |p| {
            let mut m = mlp.clone();
            m.assign(p);
            (&m.forward(x.view()) * &w).sum()
        },
        &grads.flatten(),
        &mlp.flatten(),
        STEP,
    );
    assert!(err < TOL, "parameter error {err}");

    let err = grad_check(
        |p| {
            let xp = Array2::from_shape_vec(x.dim(), p.to_vec()).unwrap();
            (&mlp.forward(xp.view()) * &w).sum()
        },
        dx.as_slice().unwrap(),
        x.as_slice().unwrap(),
        STEP,
    );
    assert!(err < TOL, "input error {err}");
}

#[test]
fn codec_gradients_match_central_differences() {
    let dims = CodecDims {
        pixels: 64,
        hidden: 10,
        feature: 8,
    };
    let codec = CodecParameters::init(dims, 12).unwrap();
    let images = gaussian(4, 64, 13).mapv(|v| 0.5 + 0.2 * v);
    let w = gaussian(4, 64, 14);
    let loss = |c: &CodecParameters| {
        let f = c.encode_batch(images.view()).unwrap();
        let r = c.decode_batch(f.output().view()).unwrap();
        (r.output() * &w).sum()
    };

    let enc = codec.encode_batch(images.view()).unwrap();
    let dec = codec.decode_batch(enc.output().view()).unwrap();
    let mut grads = codec.zeros_like();
    let d_feat = codec
        .decoder
        .backward(&dec, w.clone(), &mut grads.decoder, true)
        .unwrap();
    codec.encoder.backward(&enc, d_feat, &mut grads.encoder, false);

    let err = grad_check(
        |p| {
            let mut c = codec.clone();
            c.assign(p);
            loss(&c)
        },
        &grads.flatten(),
        &codec.flatten(),
        STEP,
    );
    assert!(err < TOL, "worst relative error {err}");
}

fn tiny_model() -> ModelDims {
    ModelDims {
        codec: CodecDims {
            pixels: 64,
            hidden: 8,
            feature: 8,
        },
        nsm: NsmDims {
            channels: 4,
            latent: 3,
            code_len: 8,
            depth: 2,
            tokens: 2,
        },
    }
}

#[test]
fn full_objective_gradient_matches_central_differences() {
    let dims = tiny_model();
    let book = generate_noc(&NocGenConfig::new(8, 3, 60.0)).unwrap();
    let params = ModelParameters::init(&dims, 21).unwrap();
    let weights = LossWeights::default();
    for (kind, seed) in [
        (ChannelKind::Awgn, 1u64),
        (ChannelKind::Rayleigh, 2),
        (ChannelKind::Rician { k_factor: 3.0 }, 3),
    ] {
        let mut rng = seeded_rng(seed, 1);
        let spec = BatchSpec {
            num_users: 3,
            batch_size: 3,
            snr_db: rng.random_range(0.0..15.0),
            kind,
            power: 1.0,
            noiseless: false,
        };
        let batch = StepBatch::sample(&mut rng, &book, &dims, &spec);
        let (loss, grads) = forward_backward(&params, &batch, &weights).unwrap();
        let fwd = forward(&params, &batch).unwrap();
        assert_eq!(step_loss(&batch, &fwd, &weights).unwrap(), loss);

        let point = params.flatten();
        let probes = sample(&mut rng, point.len(), 150).into_vec();
        let err = grad_check_at(
            |p| {
                let mut q = params.clone();
                q.assign(p);
                let f = forward(&q, &batch).unwrap();
                step_loss(&batch, &f, &weights).unwrap().total
            },
            &grads.flatten(),
            &point,
            STEP,
            &probes,
        );
        assert!(err < TOL, "{kind:?}: worst relative error {err}");
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let dims = tiny_model();
    let book = generate_noc(&NocGenConfig::new(8, 2, 60.0)).unwrap();
    let params = ModelParameters::init(&dims, 4).unwrap();
    let weights = LossWeights::default();
    let mut rng = seeded_rng(6, 1);
    let spec = BatchSpec {
        num_users: 2,
        batch_size: 2,
        snr_db: 5.0,
        kind: ChannelKind::Awgn,
        power: 1.0,
        noiseless: false,
    };
    let batch = StepBatch::sample(&mut rng, &book, &dims, &spec);
    let (_, grads) = forward_backward(&params, &batch, &weights).unwrap();
    let mut g = grads.flatten();
    let i = g
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0;
    g[i] *= 2.0;
    let err = grad_check_at(
        |p| {
            let mut q = params.clone();
            q.assign(p);
            step_loss(&batch, &forward(&q, &batch).unwrap(), &weights).unwrap().total
        },
        &g,
        &params.flatten(),
        STEP,
        &[i],
    );
    assert!(err > 0.3, "corruption went unnoticed: {err}");
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn dense_init_variance_is_inverse_fan_in() {
    let mut rng = seeded_rng(0, 0);
    for fan_in in [50usize, 100, 400] {
        let d = Dense::init(fan_in, 10_000 / fan_in, &mut rng);
        let w = d.weight.as_slice().unwrap();
        assert_eq!(w.len(), 10_000);
        let ratio = sample_variance(w) * fan_in as f64;
        assert!((0.9..=1.1).contains(&ratio), "fan_in {fan_in}: var·fan_in = {ratio}");
        assert!(d.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn nsm_init_variance_is_inverse_fan_in() {
    let dims = NsmDims {
        channels: 100,
        latent: 100,
        code_len: 128,
        depth: 1,
        tokens: 1,
    };
    let p = init_nsm(dims, 3).unwrap();
    let ratio = sample_variance(p.fu0.weight.as_slice().unwrap()) * 100.0;
    assert!((0.9..=1.1).contains(&ratio), "fu0: {ratio}");
    let code_fc = &p.layers[0].fa_code.layers[0];
    let ratio = sample_variance(code_fc.weight.as_slice().unwrap()) * 128.0;
    assert!((0.9..=1.1).contains(&ratio), "fa_code fc0: {ratio}");
    assert_eq!(p.layers.len(), 1);
    assert_eq!(p.layers[0].fa_code.layers.len(), 3);
    assert_eq!(p.layers[0].fa_snr.layers.len(), 3);
}
