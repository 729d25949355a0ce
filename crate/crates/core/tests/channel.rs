use nocsim::channel::*;
use nocsim::nn::seeded_rng;
use nocsim::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn gains(kind: ChannelKind, draws: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seeded_rng(seed, 0);
    (0..draws).map(|_| kind.sample_gain(&mut rng)).collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn awgn_channel_is_all_ones() {
    let ch = draw_channel(ChannelKind::Awgn, 3, 7);
    for tx in 0..3 {
        for rx in 0..3 {
            assert_eq!(ch.gain(tx, rx), c(1.0, 0.0));
        }
    }
}

#[test]
fn rayleigh_second_moment_is_one() {
    let g = gains(ChannelKind::Rayleigh, 100_000, 3);
    let m = g.iter().map(|h| h.norm_sqr()).sum::<f64>() / g.len() as f64;
    assert!((0.98..=1.02).contains(&m), "E|h|² = {m}");
}

#[test]
fn rayleigh_power_is_exponential() {
    // |h|² ~ Exp(1) when h ~ CN(0, 1).
    let mut p: Vec<f64> = gains(ChannelKind::Rayleigh, 20_000, 5)
        .iter()
        .map(|h| h.norm_sqr())
        .collect();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = 1.0 - (-x).exp();
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / n.sqrt(), "KS distance {d}");
}

#[test]
fn rician_large_k_collapses_to_line_of_sight() {
    let kind = ChannelKind::Rician { k_factor: 1e6 };
    let los = kind.line_of_sight();
    for h in gains(kind, 10_000, 9) {
        assert!((h - los).norm() < 1e-2);
    }
}

#[test]
fn rician_second_moment_is_one() {
    for k in [0.5, 3.0, 10.0] {
        let g = gains(ChannelKind::Rician { k_factor: k }, 100_000, 11);
        let m = g.iter().map(|h| h.norm_sqr()).sum::<f64>() / g.len() as f64;
        assert!((0.98..=1.02).contains(&m), "K={k}: E|h|² = {m}");
    }
}

#[test]
fn rician_zero_k_matches_rayleigh() {
    let n = 20_000;
    let a: Vec<f64> = gains(ChannelKind::Rician { k_factor: 0.0 }, n, 21)
        .iter()
        .map(|h| h.norm_sqr())
        .collect();
    let b: Vec<f64> = gains(ChannelKind::Rayleigh, n, 22)
        .iter()
        .map(|h| h.norm_sqr())
        .collect();
    let d = ks_two_sample(a, b);
    assert!(d < 1.63 * (2.0 / n as f64).sqrt(), "KS distance {d}");
}

#[test]
fn negative_or_nan_k_is_invalid() {
    assert!(ChannelKind::Rician { k_factor: -1.0 }.validate().is_err());
    assert!(ChannelKind::Rician { k_factor: f64::NAN }.validate().is_err());
    assert!(ChannelKind::Rician { k_factor: 0.0 }.validate().is_ok());
}

#[test]
fn draws_are_deterministic_per_seed() {
    let a = draw_channel(ChannelKind::Rayleigh, 4, 99);
    assert_eq!(a, draw_channel(ChannelKind::Rayleigh, 4, 99));
    assert_ne!(a, draw_channel(ChannelKind::Rayleigh, 4, 100));
}

#[test]
fn snr_conversion() {
    assert_eq!(snr_to_sigma2(0.0, 1.0), 1.0);
    assert!((snr_to_sigma2(10.0, 1.0) - 0.1).abs() < 1e-15);
    assert!((snr_to_sigma2(3.0, 1.0) - 10f64.powf(-0.3)).abs() < 1e-15);
    assert!((snr_to_sigma2(3.0, 1.0) - 0.5011872).abs() < 1e-7);
    assert!((snr_to_sigma2(10.0, 4.0) - 0.4).abs() < 1e-15);
    assert_eq!(NoiseSpec::new(10.0, 2.0).sigma2, snr_to_sigma2(10.0, 2.0));
}

#[test]
fn single_user_noiseless_scales_by_root_power() {
    let z = vec![c(1.0, -2.0), c(0.5, 0.25), c(-3.0, 0.0)];
    let ch = draw_channel(ChannelKind::Awgn, 1, 0);
    let y = transmit(std::slice::from_ref(&z), &ch, &NoiseSpec::noiseless(10.0, 4.0), 1).unwrap();
    for (a, b) in y[0].iter().zip(&z) {
        assert_eq!(*a, b * 2.0);
    }
}

#[test]
fn two_user_superposition() {
    let z1 = vec![c(1.0, 0.0), c(0.0, 1.0)];
    let z2 = vec![c(-1.0, 2.0), c(0.5, 0.5)];
    let ch = draw_channel(ChannelKind::Rayleigh, 2, 4);
    let p = 3.0f64;
    let y = transmit(&[z1.clone(), z2.clone()], &ch, &NoiseSpec::noiseless(0.0, p), 0).unwrap();
    for rx in 0..2 {
        for k in 0..2 {
            let want = (ch.gain(0, rx) * z1[k] + ch.gain(1, rx) * z2[k]) * p.sqrt();
            assert!((y[rx][k] - want).norm() < 1e-14);
        }
    }
}

#[test]
fn noise_variance_matches_sigma2() {
    let m = 100_000;
    let ch = draw_channel(ChannelKind::Awgn, 1, 0);
    let y = transmit(&[vec![c(0.0, 0.0); m]], &ch, &NoiseSpec::new(0.0, 1.0), 17).unwrap();
    let v = y[0].iter().map(|n| n.norm_sqr()).sum::<f64>() / m as f64;
    assert!((0.98..=1.02).contains(&v), "noise variance {v}");
    let re = y[0].iter().map(|n| n.re * n.re).sum::<f64>() / m as f64;
    assert!((re - 0.5).abs() < 0.02, "real-part variance {re}");
}

#[test]
fn noise_at_distinct_receivers_is_uncorrelated() {
    let m = 100_000;
    let ch = draw_channel(ChannelKind::Awgn, 2, 0);
    let zero = vec![c(0.0, 0.0); m];
    let y = transmit(&[zero.clone(), zero], &ch, &NoiseSpec::new(0.0, 1.0), 23).unwrap();
    let cov: Complex64 = y[0].iter().zip(&y[1]).map(|(a, b)| a * b.conj()).sum::<Complex64>()
        / m as f64;
    // Standard error of each component is about 0.5/√m.
    assert!(cov.norm() < 5.0 / (m as f64).sqrt(), "cross covariance {cov}");
}

#[test]
fn length_mismatch_is_rejected() {
    let ch = draw_channel(ChannelKind::Awgn, 2, 0);
    let r = transmit(
        &[vec![c(1.0, 0.0); 3], vec![c(1.0, 0.0); 4]],
        &ch,
        &NoiseSpec::noiseless(0.0, 1.0),
        0,
    );
    assert!(matches!(r, Err(Error::LengthMismatch { .. })));
}

#[test]
fn pack_examples() {
    assert_eq!(pack_complex(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![c(1.0, 2.0), c(3.0, 4.0)]);
    assert!(matches!(pack_complex(&[1.0]), Err(Error::OddLength(1))));
}

fn complex_vec(m: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| c(a, b)), m)
}

proptest! {
    #[test]
    fn pack_round_trip_preserves_energy(x in prop::collection::vec(-1e3f64..1e3, 0..64usize).prop_map(|mut v| { if v.len() % 2 == 1 { v.pop(); } v })) {
        let z = pack_complex(&x).unwrap();
        prop_assert_eq!(unpack_complex(&z), x.clone());
        let e_real: f64 = x.iter().map(|v| v * v).sum();
        let e_cplx: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((e_real - e_cplx).abs() <= 1e-12 * e_real.max(1.0));
    }

    #[test]
    fn superposition_is_linear(z1 in complex_vec(6), z2 in complex_vec(6), a in -3.0f64..3.0, seed in 0u64..500) {
        let ch = draw_channel(ChannelKind::Rician { k_factor: 2.0 }, 2, seed);
        let noise = NoiseSpec::noiseless(5.0, 1.5);
        let y = transmit(&[z1.clone(), z2.clone()], &ch, &noise, 0).unwrap();
        let scaled = |z: &Vec<Complex64>| z.iter().map(|v| v * a).collect::<Vec<_>>();
        let ya = transmit(&[scaled(&z1), scaled(&z2)], &ch, &noise, 0).unwrap();
        for rx in 0..2 {
            for k in 0..6 {
                prop_assert!((ya[rx][k] - y[rx][k] * a).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity(
        z in prop::collection::vec(complex_vec(5), 3),
        g in prop::collection::vec(complex_vec(5), 3),
        seed in 0u64..500,
        p in 0.1f64..4.0,
    ) {
        // Re⟨A z, g⟩ = Re⟨z, Aᴴ g⟩ for the noiseless superposition A.
        let ch = draw_channel(ChannelKind::Rayleigh, 3, seed);
        let az = transmit(&z, &ch, &NoiseSpec::noiseless(0.0, p), 0).unwrap();
        let ahg = transmit_adjoint(&g, &ch, p).unwrap();
        let inner = |a: &[Vec<Complex64>], b: &[Vec<Complex64>]| -> f64 {
            a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x * y.conj()).re).sum()
        };
        let lhs = inner(&az, &g);
        let rhs = inner(&z, &ahg);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
