//! Flat-fading N-user interference channel.
//!
//! Receiver `i` observes `y_i = Σ_j √P·h_ji·z_j + n_i`, with one complex gain
//! per TX→RX pair and circularly symmetric Gaussian noise.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Rician { k_factor: f64 },
}

impl ChannelKind {
    pub fn validate(&self) -> Result<()> {
        if let ChannelKind::Rician { k_factor } = self {
            if !(k_factor.is_finite() && *k_factor >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "rician k_factor must be finite and >= 0, got {k_factor}"
                )));
            }
        }
        Ok(())
    }

    /// Deterministic line-of-sight part of a gain (zero for Rayleigh).
    pub fn line_of_sight(&self) -> Complex64 {
        match *self {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            ChannelKind::Rayleigh => Complex64::new(0.0, 0.0),
            ChannelKind::Rician { k_factor } => {
                Complex64::new((k_factor / (k_factor + 1.0)).sqrt(), 0.0)
            }
        }
    }

    /// One gain with `E|h|² = 1`.
    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        match *self {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            ChannelKind::Rayleigh => complex_normal(rng, 1.0),
            ChannelKind::Rician { k_factor } => {
                let scatter = (1.0 / (k_factor + 1.0)).sqrt();
                self.line_of_sight() + complex_normal(rng, 1.0) * scatter
            }
        }
    }
}

/// Draw from CN(0, variance).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    num_users: usize,
    /// Row-major `[tx][rx]`.
    gains: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Gain from transmitter `tx` to receiver `rx`.
    pub fn gain(&self, tx: usize, rx: usize) -> Complex64 {
        self.gains[tx * self.num_users + rx]
    }

    pub fn from_gains(kind: ChannelKind, num_users: usize, gains: Vec<Complex64>) -> Result<Self> {
        if gains.len() != num_users * num_users {
            return Err(Error::LengthMismatch {
                expected: num_users * num_users,
                actual: gains.len(),
            });
        }
        Ok(ChannelRealization {
            kind,
            num_users,
            gains,
        })
    }

    pub fn draw_with<R: Rng + ?Sized>(kind: ChannelKind, num_users: usize, rng: &mut R) -> Self {
        let gains = (0..num_users * num_users)
            .map(|_| kind.sample_gain(rng))
            .collect();
        ChannelRealization {
            kind,
            num_users,
            gains,
        }
    }
}

pub fn draw_channel(kind: ChannelKind, num_users: usize, seed: u64) -> ChannelRealization {
    let mut rng = seeded_rng(seed, 0xC4A7);
    ChannelRealization::draw_with(kind, num_users, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub power: f64,
    /// Noise variance per complex symbol.
    pub sigma2: f64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, power: f64) -> Self {
        NoiseSpec {
            snr_db,
            power,
            sigma2: snr_to_sigma2(snr_db, power),
        }
    }

    pub fn noiseless(snr_db: f64, power: f64) -> Self {
        NoiseSpec {
            snr_db,
            power,
            sigma2: 0.0,
        }
    }
}

pub fn snr_to_sigma2(snr_db: f64, power: f64) -> f64 {
    power * 10f64.powf(-snr_db / 10.0)
}

fn check_lengths<T>(features: &[Vec<T>]) -> Result<usize> {
    let m = features.first().map_or(0, Vec::len);
    for f in features {
        if f.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: f.len(),
            });
        }
    }
    Ok(m)
}

/// Superposes every user's features at every receiver and adds noise.
pub fn transmit(
    features: &[Vec<Complex64>],
    ch: &ChannelRealization,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<Vec<Complex64>>> {
    let mut rng = seeded_rng(seed, 0x7E5);
    transmit_with(features, ch, noise, &mut rng)
}

pub fn transmit_with<R: Rng + ?Sized>(
    features: &[Vec<Complex64>],
    ch: &ChannelRealization,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>> {
    let m = check_lengths(features)?;
    if features.len() != ch.num_users() {
        return Err(Error::LengthMismatch {
            expected: ch.num_users(),
            actual: features.len(),
        });
    }
    let amp = noise.power.sqrt();
    let n = features.len();
    let mut out = Vec::with_capacity(n);
    for rx in 0..n {
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        for (tx, z) in features.iter().enumerate() {
            let h = ch.gain(tx, rx) * amp;
            for (yk, zk) in y.iter_mut().zip(z) {
                *yk += h * zk;
            }
        }
        if noise.sigma2 > 0.0 {
            for yk in y.iter_mut() {
                *yk += complex_normal(rng, noise.sigma2);
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Adjoint of the noiseless superposition: `dL/dz_j = Σ_i √P·conj(h_ji)·dL/dy_i`.
pub fn transmit_adjoint(
    grad_received: &[Vec<Complex64>],
    ch: &ChannelRealization,
    power: f64,
) -> Result<Vec<Vec<Complex64>>> {
    let m = check_lengths(grad_received)?;
    let amp = power.sqrt();
    let n = ch.num_users();
    Ok((0..n)
        .map(|tx| {
            let mut g = vec![Complex64::new(0.0, 0.0); m];
            for (rx, dy) in grad_received.iter().enumerate() {
                let h = ch.gain(tx, rx).conj() * amp;
                for (gk, dk) in g.iter_mut().zip(dy) {
                    *gk += h * dk;
                }
            }
            g
        })
        .collect())
}

/// `[a, b, c, d]` → `[a+bi, c+di]`.
pub fn pack_complex(x: &[f64]) -> Result<Vec<Complex64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::OddLength(x.len()));
    }
    Ok(x.chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}

pub fn unpack_complex(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awgn_gains_are_unity() {
        let ch = draw_channel(ChannelKind::Awgn, 3, 9);
        for tx in 0..3 {
            for rx in 0..3 {
                assert_eq!(ch.gain(tx, rx), Complex64::new(1.0, 0.0));
            }
        }
    }

    #[test]
    fn sigma2_values() {
        assert_eq!(snr_to_sigma2(0.0, 1.0), 1.0);
        assert!((snr_to_sigma2(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma2(3.0, 1.0) - 0.501_187_233_627_272_2).abs() < 1e-12);
    }

    #[test]
    fn single_user_noiseless_is_scaled_input() {
        let z = vec![vec![Complex64::new(0.3, -0.2), Complex64::new(-1.0, 0.5)]];
        let ch = draw_channel(ChannelKind::Awgn, 1, 0);
        let y = transmit(&z, &ch, &NoiseSpec::noiseless(10.0, 4.0), 1).unwrap();
        assert_eq!(y[0], vec![z[0][0] * 2.0, z[0][1] * 2.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let z = vec![vec![Complex64::new(1.0, 0.0)], vec![]];
        let ch = draw_channel(ChannelKind::Awgn, 2, 0);
        assert!(matches!(
            transmit(&z, &ch, &NoiseSpec::new(0.0, 1.0), 0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pack_examples() {
        let z = pack_complex(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(z, vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert!(matches!(pack_complex(&[1.0]), Err(Error::OddLength(1))));
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        // <A z, w> == <z, A* w> for the noiseless superposition.
        let ch = draw_channel(ChannelKind::Rayleigh, 3, 4);
        let mut rng = seeded_rng(5, 0);
        let z: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..4).map(|_| complex_normal(&mut rng, 1.0)).collect())
            .collect();
        let w: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..4).map(|_| complex_normal(&mut rng, 1.0)).collect())
            .collect();
        let az = transmit(&z, &ch, &NoiseSpec::noiseless(0.0, 2.0), 0).unwrap();
        let aw = transmit_adjoint(&w, &ch, 2.0).unwrap();
        let inner = |a: &[Vec<Complex64>], b: &[Vec<Complex64>]| -> Complex64 {
            a.iter()
                .zip(b)
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q.conj()))
                .sum()
        };
        let lhs = inner(&az, &w);
        let rhs = inner(&z, &aw);
        assert!((lhs - rhs).norm() < 1e-12);
    }
}
