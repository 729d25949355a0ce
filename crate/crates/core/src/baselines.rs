//! Classical multiple-access references: Walsh-spread CDMA and two-user
//! power-domain NOMA with successive interference cancellation. Both use
//! real BPSK (bit 0 → +1, bit 1 → −1) over AWGN with perfect equalization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::codebook::{walsh_matrix, WalshMatrix};
use crate::error::{Error, Result};
use crate::metrics::ber;
use crate::nn::seeded_rng;

const BITS_STREAM: u64 = 0xB175;
const NOISE_STREAM: u64 = 0xA1F0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitStream {
    pub bits: Vec<u8>,
}

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidConfig(format!("bit value {b} is not 0 or 1")));
        }
        Ok(BitStream { bits })
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        BitStream {
            bits: (0..len).map(|_| rng.random_range(0..=1u8)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

fn bpsk(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Hard decision; ties go to bit 0.
fn slice(x: f64) -> u8 {
    if x >= 0.0 {
        0
    } else {
        1
    }
}

/// `Q(√(2γ))` with `γ = 10^(snr/10)`: BPSK bit error rate over AWGN.
pub fn bpsk_awgn_ber_theory(snr_db: f64) -> f64 {
    let gamma = 10f64.powf(snr_db / 10.0);
    q_function((2.0 * gamma).sqrt())
}

pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub decoded: Vec<BitStream>,
    pub ber: Vec<f64>,
    /// Per-bit correlator outputs before slicing (CDMA only).
    pub statistics: Vec<Vec<f64>>,
    /// Channel symbols (chips) spent per bit.
    pub symbols_per_bit: usize,
}

/// Noise source for the baselines; `None` means noiseless.
fn gaussian(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite positive std"))
}

/// Spreads each user's BPSK symbols by its Walsh row, sums, adds real AWGN
/// and despreads by correlation. `snr_db` is Eb/N0 per user; `None` is
/// noiseless.
pub fn cdma_roundtrip(
    streams: &[BitStream],
    walsh: &WalshMatrix,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<RoundTrip> {
    let k = streams.len();
    let n = walsh.order();
    if k > n {
        return Err(Error::TooManyUsers {
            users: k,
            available: n,
        });
    }
    let len = streams.first().map_or(0, |s| s.len());
    if len == 0 {
        return Err(Error::InvalidConfig("bit streams must be nonempty".into()));
    }
    if let Some(s) = streams.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: s.len(),
        });
    }
    // Eb = n (unit chips), so σ² = N0/2 = n / (2γ).
    let noise = snr_db.and_then(|s| gaussian((n as f64 / (2.0 * 10f64.powf(s / 10.0))).sqrt()));
    let mut rng = seeded_rng(seed, NOISE_STREAM);
    let mut chips = vec![0.0; n];
    let mut statistics = vec![Vec::with_capacity(len); k];
    for t in 0..len {
        chips.iter_mut().for_each(|c| *c = 0.0);
        for (u, s) in streams.iter().enumerate() {
            let sym = bpsk(s.bits[t]);
            for (c, &w) in chips.iter_mut().zip(walsh.row(u)) {
                *c += sym * f64::from(w);
            }
        }
        if let Some(d) = &noise {
            for c in chips.iter_mut() {
                *c += d.sample(&mut rng);
            }
        }
        for (u, stat) in statistics.iter_mut().enumerate() {
            stat.push(
                chips
                    .iter()
                    .zip(walsh.row(u))
                    .map(|(c, &w)| c * f64::from(w))
                    .sum(),
            );
        }
    }
    let decoded: Vec<BitStream> = statistics
        .iter()
        .map(|st| BitStream {
            bits: st.iter().map(|&x| slice(x)).collect(),
        })
        .collect();
    let rates = streams
        .iter()
        .zip(&decoded)
        .map(|(s, d)| ber(&s.bits, &d.bits))
        .collect::<Result<_>>()?;
    Ok(RoundTrip {
        decoded,
        ber: rates,
        statistics,
        symbols_per_bit: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NomaConfig {
    /// Power share α of user 1; user 2 gets `1 − α`.
    pub power_split: f64,
    /// Per-receiver Es/N0 in dB; `None` for a noiseless link.
    pub snr_db: [Option<f64>; 2],
    pub seed: u64,
    /// Decode the weaker user first (wrong order, for comparison).
    #[serde(default)]
    pub weaker_first: bool,
}

impl NomaConfig {
    pub fn new(power_split: f64, snr_db: Option<f64>, seed: u64) -> Self {
        NomaConfig {
            power_split,
            snr_db: [snr_db; 2],
            seed,
            weaker_first: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_split > 0.0 && self.power_split < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "power_split must lie in (0, 1), got {}",
                self.power_split
            )));
        }
        Ok(())
    }

    fn amplitudes(&self) -> [f64; 2] {
        [self.power_split.sqrt(), (1.0 - self.power_split).sqrt()]
    }

    /// Users in the order the receiver peels them off.
    fn decode_order(&self) -> [usize; 2] {
        let stronger_first = if self.power_split >= 0.5 { [0, 1] } else { [1, 0] };
        if self.weaker_first {
            [stronger_first[1], stronger_first[0]]
        } else {
            stronger_first
        }
    }
}

/// Downlink superposition `√α·s₁ + √(1−α)·s₂`. Receiver `u` sees it at its
/// own SNR and runs SIC in decode order until it reaches its own user.
pub fn noma_sic_roundtrip(streams: &[BitStream; 2], cfg: &NomaConfig) -> Result<RoundTrip> {
    cfg.validate()?;
    let len = streams[0].len();
    if len == 0 {
        return Err(Error::InvalidConfig("bit streams must be nonempty".into()));
    }
    if streams[1].len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: streams[1].len(),
        });
    }
    let amp = cfg.amplitudes();
    let order = cfg.decode_order();
    let mut rng = seeded_rng(cfg.seed, NOISE_STREAM);
    let mut decoded: [Vec<u8>; 2] = std::array::from_fn(|_| Vec::with_capacity(len));
    for rx in 0..2 {
        // Unit total symbol energy: σ² = 1 / (2γ).
        let noise = cfg.snr_db[rx].and_then(|s| gaussian((0.5 / 10f64.powf(s / 10.0)).sqrt()));
        for t in 0..len {
            let mut y = amp[0] * bpsk(streams[0].bits[t]) + amp[1] * bpsk(streams[1].bits[t]);
            if let Some(d) = &noise {
                y += d.sample(&mut rng);
            }
            for &u in &order {
                let bit = slice(y);
                if u == rx {
                    decoded[rx].push(bit);
                    break;
                }
                y -= amp[u] * bpsk(bit);
            }
        }
    }
    let decoded: Vec<BitStream> = decoded.into_iter().map(|bits| BitStream { bits }).collect();
    let rates = streams
        .iter()
        .zip(&decoded)
        .map(|(s, d)| ber(&s.bits, &d.bits))
        .collect::<Result<_>>()?;
    Ok(RoundTrip {
        decoded,
        ber: rates,
        statistics: Vec::new(),
        symbols_per_bit: 1,
    })
}

/// One line of a BER sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub scheme: String,
    /// 1-based user index.
    pub user: usize,
    pub users: usize,
    pub snr_db: f64,
    pub bits: usize,
    pub errors: usize,
    pub ber: f64,
    pub symbols_per_bit: usize,
}

pub const BER_CSV_HEADER: &str = "scheme,user,users,snr_db,bits,errors,ber,symbols_per_bit";

impl BerRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:e},{}",
            self.scheme,
            self.user,
            self.users,
            self.snr_db,
            self.bits,
            self.errors,
            self.ber,
            self.symbols_per_bit
        )
    }
}

pub fn rows_to_csv(rows: &[BerRow]) -> String {
    let mut out = String::from(BER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

fn random_streams(users: usize, bits: usize, seed: u64) -> Vec<BitStream> {
    let mut rng = seeded_rng(seed, BITS_STREAM);
    (0..users).map(|_| BitStream::random(bits, &mut rng)).collect()
}

fn rows_for(scheme: &str, snr_db: f64, streams: &[BitStream], rt: &RoundTrip) -> Vec<BerRow> {
    streams
        .iter()
        .zip(&rt.decoded)
        .enumerate()
        .map(|(u, (s, d))| {
            let errors = s.bits.iter().zip(&d.bits).filter(|(a, b)| a != b).count();
            BerRow {
                scheme: scheme.to_string(),
                user: u + 1,
                users: streams.len(),
                snr_db,
                bits: s.len(),
                errors,
                ber: rt.ber[u],
                symbols_per_bit: rt.symbols_per_bit,
            }
        })
        .collect()
}

/// Spreading length used for `users` CDMA users: the smallest Walsh order
/// that has enough rows.
pub fn cdma_spreading_length(users: usize) -> usize {
    users.max(1).next_power_of_two()
}

/// CDMA BER at each SNR, one row per user per SNR.
pub fn cdma_sweep(users: usize, snrs_db: &[f64], bits: usize, seed: u64) -> Result<Vec<BerRow>> {
    if users == 0 || bits == 0 {
        return Err(Error::InvalidConfig("users and bits must be >= 1".into()));
    }
    let walsh = walsh_matrix(cdma_spreading_length(users))?;
    let streams = random_streams(users, bits, seed);
    let mut rows = Vec::new();
    for (i, &snr) in snrs_db.iter().enumerate() {
        let rt = cdma_roundtrip(&streams, &walsh, Some(snr), seed.wrapping_add(i as u64))?;
        rows.extend(rows_for("cdma", snr, &streams, &rt));
    }
    Ok(rows)
}

/// Two-user NOMA-SIC BER at each SNR (same SNR at both receivers).
pub fn noma_sweep(power_split: f64, snrs_db: &[f64], bits: usize, seed: u64) -> Result<Vec<BerRow>> {
    if bits == 0 {
        return Err(Error::InvalidConfig("bits must be >= 1".into()));
    }
    let streams = random_streams(2, bits, seed);
    let pair = [streams[0].clone(), streams[1].clone()];
    let mut rows = Vec::new();
    for (i, &snr) in snrs_db.iter().enumerate() {
        let cfg = NomaConfig::new(power_split, Some(snr), seed.wrapping_add(i as u64));
        let rt = noma_sic_roundtrip(&pair, &cfg)?;
        rows.extend(rows_for("noma", snr, &streams, &rt));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[u8]) -> BitStream {
        BitStream::new(v.to_vec()).unwrap()
    }

    #[test]
    fn theory_examples() {
        assert!((bpsk_awgn_ber_theory(0.0) - 0.0786496).abs() < 1e-7);
        assert!((bpsk_awgn_ber_theory(10.0) - 3.872e-6).abs() < 1e-9);
        assert!((bpsk_awgn_ber_theory(-300.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cdma_noiseless_statistics_are_plus_minus_n() {
        let w = walsh_matrix(4).unwrap();
        let s = [bits(&[0, 1, 1]), bits(&[1, 1, 0]), bits(&[0, 0, 1])];
        let rt = cdma_roundtrip(&s, &w, None, 0).unwrap();
        assert_eq!(rt.ber, vec![0.0; 3]);
        assert_eq!(rt.statistics[0], vec![4.0, -4.0, -4.0]);
        assert_eq!(rt.statistics[1], vec![-4.0, -4.0, 4.0]);
        assert_eq!(rt.symbols_per_bit, 4);
    }

    #[test]
    fn cdma_rejects_too_many_users() {
        let w = walsh_matrix(2).unwrap();
        let s = vec![bits(&[0]); 3];
        assert!(matches!(
            cdma_roundtrip(&s, &w, None, 0),
            Err(Error::TooManyUsers { users: 3, available: 2 })
        ));
    }

    #[test]
    fn noma_noiseless_cases() {
        let s = [bits(&[0, 0, 1, 1]), bits(&[0, 1, 0, 1])];
        let rt = noma_sic_roundtrip(&s, &NomaConfig::new(0.8, None, 0)).unwrap();
        assert_eq!(rt.ber, vec![0.0, 0.0]);
        // Equal split: the (−,+) pair superposes to 0 and is sliced wrong.
        let rt = noma_sic_roundtrip(&s, &NomaConfig::new(0.5, None, 0)).unwrap();
        assert_eq!(rt.ber[1], 0.25);
        assert!(NomaConfig::new(1.0, None, 0).validate().is_err());
    }

    #[test]
    fn csv_row_layout() {
        let r = BerRow {
            scheme: "cdma".into(),
            user: 2,
            users: 3,
            snr_db: 4.0,
            bits: 100,
            errors: 3,
            ber: 0.03,
            symbols_per_bit: 4,
        };
        assert_eq!(r.to_csv(), "cdma,2,3,4,100,3,3e-2,4");
    }
}
