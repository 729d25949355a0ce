//! Feature-space geometry and signal-quality metrics.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{mse, FEATURE_FLOOR};

pub const PSNR_CAP_DB: f64 = 120.0;
const PSNR_MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub subspace_rank: usize,
    pub projection_threshold: f64,
    pub psnr_max_value: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            subspace_rank: 4,
            projection_threshold: 0.2,
            psnr_max_value: 1.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subspace_rank == 0 {
            return Err(Error::InvalidConfig("subspace_rank must be >= 1".into()));
        }
        if !(self.projection_threshold > 0.0) {
            return Err(Error::InvalidConfig("projection_threshold must be > 0".into()));
        }
        if !(self.psnr_max_value > 0.0) {
            return Err(Error::InvalidConfig("psnr_max_value must be > 0".into()));
        }
        Ok(())
    }
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na < FEATURE_FLOOR || nb < FEATURE_FLOOR {
        return Err(Error::DegenerateFeature);
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Mean cosine similarity between users, pairing row `b` of each user's
/// sample matrix with row `b` of every other user's.
pub fn cosine_matrix(samples: &[ArrayView2<f64>]) -> Result<Vec<Vec<f64>>> {
    pairwise_mean(samples, |c| c)
}

/// As [`cosine_matrix`] but averaging `|cos|`.
pub fn abs_cosine_matrix(samples: &[ArrayView2<f64>]) -> Result<Vec<Vec<f64>>> {
    pairwise_mean(samples, f64::abs)
}

fn pairwise_mean(samples: &[ArrayView2<f64>], map: fn(f64) -> f64) -> Result<Vec<Vec<f64>>> {
    let k = samples.len();
    let rows = samples.first().map_or(0, |s| s.nrows());
    if rows == 0 {
        return Err(Error::ShapeMismatch("need at least one sample per user".into()));
    }
    if samples.iter().any(|s| s.dim() != samples[0].dim()) {
        return Err(Error::ShapeMismatch("users have differently shaped samples".into()));
    }
    let mut out = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let mut sum = 0.0;
            for b in 0..rows {
                sum += map(cosine(samples[i].row(b), samples[j].row(b))?);
            }
            out[i][j] = sum / rows as f64;
            out[j][i] = out[i][j];
        }
        for b in 0..rows {
            if samples[i].row(b).dot(&samples[i].row(b)).sqrt() < FEATURE_FLOOR {
                return Err(Error::DegenerateFeature);
            }
        }
    }
    Ok(out)
}

/// Mean of the strictly upper-triangular entries; 0 for fewer than two users.
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, row) in m.iter().enumerate() {
        for v in &row[i + 1..] {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn angle_matrix(cosines: &[Vec<f64>]) -> Vec<Vec<f64>> {
    cosines
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, c)| {
                    if i == j {
                        0.0
                    } else {
                        c.clamp(-1.0, 1.0).acos().to_degrees()
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal basis (as rows) of a user's empirical feature subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub user_index: usize,
    pub basis: Array2<f64>,
}

impl SubspaceEstimate {
    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Relative singular-value cutoff below which a direction counts as absent.
const RANK_TOL: f64 = 1e-10;

/// Top-`rank` right singular vectors of the (uncentered) sample matrix.
/// Each basis vector's largest-magnitude entry is made positive.
pub fn estimate_subspace(
    samples: ArrayView2<f64>,
    rank: usize,
    user_index: usize,
) -> Result<SubspaceEstimate> {
    let (n, d) = samples.dim();
    if rank == 0 || n < rank || d < rank {
        return Err(Error::RankDeficient(rank));
    }
    let m = DMatrix::from_fn(n, d, |r, c| samples[[r, c]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top = svd.singular_values[order[0]];
    if !(top > 0.0) || svd.singular_values[order[rank - 1]] <= RANK_TOL * top {
        return Err(Error::RankDeficient(rank));
    }
    let mut basis = Array2::zeros((rank, d));
    for (out_row, &idx) in order.iter().take(rank).enumerate() {
        let v: Vec<f64> = (0..d).map(|c| v_t[(idx, c)]).collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (c, x) in v.into_iter().enumerate() {
            basis[[out_row, c]] = s * x;
        }
    }
    Ok(SubspaceEstimate { user_index, basis })
}

/// Squared norm of the orthogonal projection of `z` onto the subspace.
pub fn projection_power(z: ArrayView1<f64>, sub: &SubspaceEstimate) -> Result<f64> {
    if z.len() != sub.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature width {} vs subspace width {}",
            z.len(),
            sub.dim()
        )));
    }
    let coeffs: Array1<f64> = sub.basis.dot(&z);
    Ok(coeffs.dot(&coeffs))
}

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(original: ArrayView1<f64>, reconstruction: ArrayView1<f64>, max_value: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(original, reconstruction)?, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Fraction of differing bits.
pub fn ber(sent: &[u8], received: &[u8]) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::LengthMismatch {
            expected: sent.len(),
            actual: received.len(),
        });
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}
