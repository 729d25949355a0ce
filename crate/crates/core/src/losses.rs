//! Composite training objective: reconstruction, fairness and orthogonality.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a feature counts as degenerate.
pub const FEATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_fair: f64,
    pub lambda_orth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_fair: 0.01,
            lambda_orth: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_fair", self.lambda_fair), ("lambda_orth", self.lambda_orth)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub fair: f64,
    pub orth: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(recon: f64, fair: f64, orth: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            recon,
            fair,
            orth,
            total: recon + w.lambda_fair * fair + w.lambda_orth * orth,
        }
    }
}

pub fn mse(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "mse over {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Mean over users of each user's pixel MSE.
pub fn recon_loss(originals: &[ArrayView1<f64>], reconstructions: &[ArrayView1<f64>]) -> Result<f64> {
    if originals.len() != reconstructions.len() || originals.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} originals vs {} reconstructions",
            originals.len(),
            reconstructions.len()
        )));
    }
    let mut total = 0.0;
    for (s, r) in originals.iter().zip(reconstructions) {
        total += mse(s.view(), r.view())?;
    }
    Ok(total / originals.len() as f64)
}

/// Mean absolute deviation of per-user MSEs from their mean.
pub fn fairness_loss(mses: &[f64]) -> f64 {
    if mses.is_empty() {
        return 0.0;
    }
    let n = mses.len() as f64;
    let mean = mses.iter().sum::<f64>() / n;
    mses.iter().map(|m| (m - mean).abs()).sum::<f64>() / n
}

/// `∂ fairness / ∂ mse_k`; uses sign(0) = 0 at ties.
pub fn fairness_grad(mses: &[f64]) -> Vec<f64> {
    let n = mses.len() as f64;
    let mean = mses.iter().sum::<f64>() / n;
    let signs: Vec<f64> = mses.iter().map(|m| sign(m - mean)).collect();
    let avg_sign = signs.iter().sum::<f64>() / n;
    signs.iter().map(|s| (s - avg_sign) / n).collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Mean squared cosine similarity over unordered user pairs; zero for a single user.
pub fn orth_loss(features: &[ArrayView1<f64>]) -> Result<f64> {
    Ok(orth_loss_grad(features)?.0)
}

/// Orthogonality loss and its gradient with respect to each user's feature.
pub fn orth_loss_grad(features: &[ArrayView1<f64>]) -> Result<(f64, Vec<ndarray::Array1<f64>>)> {
    let n = features.len();
    let mut grads: Vec<ndarray::Array1<f64>> = features
        .iter()
        .map(|f| ndarray::Array1::zeros(f.len()))
        .collect();
    if n < 2 {
        return Ok((0.0, grads));
    }
    let norms: Vec<f64> = features.iter().map(|f| norm(f.view())).collect();
    if norms.iter().any(|&v| v < FEATURE_FLOOR) {
        return Err(Error::DegenerateFeature);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (u, v) = (&features[i], &features[j]);
            if u.len() != v.len() {
                return Err(Error::ShapeMismatch("feature widths differ".into()));
            }
            let nn = norms[i] * norms[j];
            let cos = u.dot(v) / nn;
            loss += cos * cos;
            let coeff = 2.0 * cos / pairs;
            // d cos / du = v/(|u||v|) - cos·u/|u|²
            grads[i].scaled_add(coeff / nn, v);
            grads[i].scaled_add(-coeff * cos / (norms[i] * norms[i]), u);
            grads[j].scaled_add(coeff / nn, u);
            grads[j].scaled_add(-coeff * cos / (norms[j] * norms[j]), v);
        }
    }
    Ok((loss / pairs, grads))
}

/// Per-user batches of one training step: row `b` of each array is batch item `b`.
#[derive(Debug, Clone)]
pub struct BatchState<'a> {
    pub originals: Vec<ArrayView2<'a, f64>>,
    pub reconstructions: Vec<ArrayView2<'a, f64>>,
    /// Post-modulation transmit features.
    pub features: Vec<ArrayView2<'a, f64>>,
}

/// Gradients of the weighted total with respect to the batch state.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub reconstructions: Vec<Array2<f64>>,
    pub features: Vec<Array2<f64>>,
}

impl BatchState<'_> {
    fn check(&self) -> Result<(usize, usize)> {
        let n = self.originals.len();
        if n == 0 || self.reconstructions.len() != n || self.features.len() != n {
            return Err(Error::ShapeMismatch("user counts differ across batch state".into()));
        }
        let dim = self.originals[0].dim();
        for (s, r) in self.originals.iter().zip(&self.reconstructions) {
            if s.dim() != dim || r.dim() != dim {
                return Err(Error::ShapeMismatch("image batches differ in shape".into()));
            }
        }
        let fdim = self.features[0].dim();
        if fdim.0 != dim.0 || self.features.iter().any(|f| f.dim() != fdim) {
            return Err(Error::ShapeMismatch("feature batches differ in shape".into()));
        }
        Ok((n, dim.0))
    }

    /// Per-user MSE over every pixel of that user's batch.
    pub fn user_mses(&self) -> Vec<f64> {
        self.originals
            .iter()
            .zip(&self.reconstructions)
            .map(|(s, r)| {
                let d = s - r;
                d.mapv(|v| v * v).mean().unwrap_or(0.0)
            })
            .collect()
    }
}

/// Orthogonality averaged per batch item, then over the batch.
fn batch_orth(state: &BatchState, want_grad: bool) -> Result<(f64, Vec<Array2<f64>>)> {
    let (n, batch) = state.check()?;
    let mut grads: Vec<Array2<f64>> = if want_grad {
        state.features.iter().map(|f| Array2::zeros(f.dim())).collect()
    } else {
        Vec::new()
    };
    let mut total = 0.0;
    for b in 0..batch {
        let rows: Vec<ArrayView1<f64>> = (0..n).map(|u| state.features[u].row(b)).collect();
        let (l, g) = orth_loss_grad(&rows)?;
        total += l;
        if want_grad {
            for (u, gu) in g.into_iter().enumerate() {
                grads[u].row_mut(b).scaled_add(1.0 / batch as f64, &gu);
            }
        }
    }
    Ok((total / batch as f64, grads))
}

pub fn total_loss(state: &BatchState, weights: &LossWeights) -> Result<LossBreakdown> {
    state.check()?;
    let mses = state.user_mses();
    let recon = mses.iter().sum::<f64>() / mses.len() as f64;
    let fair = fairness_loss(&mses);
    let (orth, _) = batch_orth(state, false)?;
    Ok(LossBreakdown::combine(recon, fair, orth, weights))
}

pub fn total_loss_backward(
    state: &BatchState,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    let (n, _) = state.check()?;
    let mses = state.user_mses();
    let recon = mses.iter().sum::<f64>() / n as f64;
    let fair = fairness_grad(&mses);
    let fair_value = fairness_loss(&mses);
    let (orth, orth_grads) = batch_orth(state, true)?;

    let reconstructions = (0..n)
        .map(|u| {
            let s = &state.originals[u];
            let r = &state.reconstructions[u];
            // d mse_u / d r = 2 (r - s) / numel
            let dmse = 2.0 / s.len() as f64;
            let coeff = (1.0 / n as f64 + weights.lambda_fair * fair[u]) * dmse;
            (r - s) * coeff
        })
        .collect();
    let features = orth_grads
        .into_iter()
        .map(|g| g * weights.lambda_orth)
        .collect();
    Ok((
        LossBreakdown::combine(recon, fair_value, orth, weights),
        LossGrads {
            reconstructions,
            features,
        },
    ))
}

/// Relative error floor so near-zero gradient entries compare absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

/// Worst componentwise relative error between `analytic` and central
/// differences of `value` at `point`.
pub fn grad_check<F>(value: F, analytic: &[f64], point: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(value, analytic, point, step, &all)
}

/// As [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_at<F>(mut value: F, analytic: &[f64], point: &[f64], step: f64, indices: &[usize]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "step must be positive");
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = p[i];
        p[i] = orig + step;
        let up = value(&p);
        p[i] = orig - step;
        let down = value(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn recon_examples() {
        let s = array![0.2, 0.4];
        assert_eq!(recon_loss(&[s.view()], &[s.view()]).unwrap(), 0.0);
        let z = Array1::zeros(4);
        let o = Array1::ones(4);
        assert_eq!(
            recon_loss(&[z.view(), z.view()], &[o.view(), o.view()]).unwrap(),
            1.0
        );
        assert!(recon_loss(&[s.view()], &[]).is_err());
        assert!(recon_loss(&[s.view()], &[o.view()]).is_err());
    }

    #[test]
    fn recon_of_users_with_known_mses() {
        // user mses 0.1 and 0.3 over single-pixel images
        let s1 = array![0.0];
        let r1 = array![0.1f64.sqrt()];
        let s2 = array![0.0];
        let r2 = array![0.3f64.sqrt()];
        let v = recon_loss(&[s1.view(), s2.view()], &[r1.view(), r2.view()]).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fairness_examples() {
        assert!(fairness_loss(&[0.2, 0.2, 0.2]).abs() < 1e-16);
        assert!((fairness_loss(&[0.1, 0.3]) - 0.1).abs() < 1e-15);
        assert_eq!(fairness_loss(&[0.7]), 0.0);
    }

    #[test]
    fn orth_examples() {
        let e1 = array![1.0, 0.0, 0.0];
        let e2 = array![0.0, 2.0, 0.0];
        let e3 = array![0.0, 0.0, -1.0];
        assert_eq!(orth_loss(&[e1.view(), e2.view(), e3.view()]).unwrap(), 0.0);
        let z = array![0.3, -1.0, 2.0];
        let z3 = &z * 3.0;
        assert!((orth_loss(&[z.view(), z3.view()]).unwrap() - 1.0).abs() < 1e-15);
        let (s, c) = 60f64.to_radians().sin_cos();
        let u = array![1.0, 0.0];
        let v = array![c, s];
        assert!((orth_loss(&[u.view(), v.view()]).unwrap() - 0.25).abs() < 1e-15);
        let zero = array![0.0, 0.0];
        assert!(matches!(
            orth_loss(&[u.view(), zero.view()]),
            Err(Error::DegenerateFeature)
        ));
    }

    #[test]
    fn total_combination() {
        let w = LossWeights::default();
        assert_eq!(LossBreakdown::combine(0.5, 0.0, 0.0, &w).total, 0.5);
        let b = LossBreakdown::combine(0.5, 0.1, 0.25, &w);
        assert!((b.total - 0.5035).abs() <= 1e-12 * 0.5035);
        let none = LossWeights {
            lambda_fair: 0.0,
            lambda_orth: 0.0,
        };
        assert_eq!(LossBreakdown::combine(0.5, 0.1, 0.25, &none).total, 0.5);
    }

    #[test]
    fn fairness_grad_matches_finite_differences() {
        let m = [0.11, 0.35, 0.2, 0.27];
        let g = fairness_grad(&m);
        let err = grad_check(fairness_loss, &g, &m, 1e-6);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn orth_grad_matches_finite_differences() {
        let feats = [array![0.3, -1.0, 0.5, 0.2], array![0.9, 0.1, -0.4, 0.6], array![-0.2, 0.4, 0.4, 1.0]];
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let (_, g) = orth_loss_grad(&views).unwrap();
        let flat: Vec<f64> = feats.iter().flat_map(|f| f.iter().copied()).collect();
        let analytic: Vec<f64> = g.iter().flat_map(|f| f.iter().copied()).collect();
        let value = |p: &[f64]| {
            let fs: Vec<Array1<f64>> = p.chunks(4).map(|c| Array1::from(c.to_vec())).collect();
            let v: Vec<_> = fs.iter().map(|f| f.view()).collect();
            orth_loss(&v).unwrap()
        };
        assert!(grad_check(value, &analytic, &flat, 1e-5) < 1e-7);
    }

    #[test]
    fn grad_check_on_quadratic_and_corruption() {
        let p: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let q = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        assert!(grad_check(q, &p, &p, 1e-4) < 1e-8);
        let mut bad = p.clone();
        bad[3] *= 2.0;
        assert!(grad_check(q, &bad, &p, 1e-4) > 0.3);
    }
}
