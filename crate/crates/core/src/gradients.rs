//! Analytic gradients of each loss with respect to the predicted depths.
//!
//! Absolute values use the `sign(0) = 0` subgradient. The SSIM gradient goes
//! through the windowed moments: every window placement contributes
//!
//! ```text
//! dS/dx_k = w_k * (alpha + beta * x_k + gamma * y_k)
//! ```
//!
//! to each pixel `k` it covers, and the per-placement coefficients are
//! scattered back with the transpose of the moment filter.

use serde::Serialize;

use crate::depth::EvalPair;
use crate::error::{DepthError, Result};
use crate::losses::{check_edge_dims, moments, LossWeights, SsimParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GradientField {
    pub(crate) fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn mae_grad_raw(pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter().zip(gt).map(|(&p, &g)| sign(p - g) / n).collect()
}

/// `sign` of a forward-difference mismatch, zero when the mismatch is below
/// the rounding noise of the four depths it was computed from.
fn difference_sign(d: f64, magnitude: f64) -> f64 {
    if d.abs() <= 4.0 * f64::EPSILON * magnitude {
        0.0
    } else {
        sign(d)
    }
}

pub(crate) fn edge_grad_raw(width: usize, height: usize, pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let nx = (height * (width - 1)) as f64;
    let ny = ((height - 1) * width) as f64;
    let mut out = vec![0.0; pred.len()];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                let mag = pred[i + 1]
                    .abs()
                    .max(pred[i].abs())
                    .max(gt[i + 1].abs())
                    .max(gt[i].abs());
                let s = difference_sign((pred[i + 1] - pred[i]) - (gt[i + 1] - gt[i]), mag) / nx;
                out[i + 1] += s;
                out[i] -= s;
            }
            if r + 1 < height {
                let mag = pred[i + width]
                    .abs()
                    .max(pred[i].abs())
                    .max(gt[i + width].abs())
                    .max(gt[i].abs());
                let s = difference_sign((pred[i + width] - pred[i]) - (gt[i + width] - gt[i]), mag) / ny;
                out[i + width] += s;
                out[i] -= s;
            }
        }
    }
    out
}

/// Gradient of the SSIM *index* (not the loss) with respect to `pred`.
pub(crate) fn ssim_index_grad_raw(
    width: usize,
    height: usize,
    pred: &[f64],
    gt: &[f64],
    params: &SsimParams,
) -> (f64, Vec<f64>) {
    let window = params.window_weights();
    let m = moments(width, height, pred, gt, &window);
    let (c1, c2) = (params.c1(), params.c2());
    let count = m.mu_x.len();
    let mut index = 0.0;
    let mut alpha = Vec::with_capacity(count);
    let mut beta = Vec::with_capacity(count);
    let mut gamma = Vec::with_capacity(count);
    for i in 0..count {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * m.cov[i] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = m.var_x[i] + m.var_y[i] + c2;
        let s = (a1 * a2) / (b1 * b2);
        index += s;
        let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
        let d_var = -s / b2;
        let d_cov = 2.0 * a1 / (b1 * b2);
        alpha.push(d_mu - 2.0 * mx * d_var - my * d_cov);
        beta.push(2.0 * d_var);
        gamma.push(d_cov);
    }
    let a = window.scatter_adjoint(width, height, &alpha);
    let b = window.scatter_adjoint(width, height, &beta);
    let g = window.scatter_adjoint(width, height, &gamma);
    let inv = 1.0 / count as f64;
    let grad = (0..pred.len())
        .map(|k| (a[k] + pred[k] * b[k] + gt[k] * g[k]) * inv)
        .collect();
    (index / count as f64, grad)
}

/// Gradient of the clipped, rescaled SSIM loss. Zero where the clip is active.
pub(crate) fn ssim_loss_grad_raw(
    width: usize,
    height: usize,
    pred: &[f64],
    gt: &[f64],
    params: &SsimParams,
) -> Vec<f64> {
    let (index, mut grad) = ssim_index_grad_raw(width, height, pred, gt, params);
    let loss = 0.5 * (1.0 - index);
    let scale = if (0.0..=1.0).contains(&loss) { -0.5 } else { 0.0 };
    grad.iter_mut().for_each(|g| *g *= scale);
    grad
}

pub(crate) fn combined_grad_raw(
    width: usize,
    height: usize,
    pred: &[f64],
    gt: &[f64],
    weights: &LossWeights,
    params: &SsimParams,
) -> Vec<f64> {
    let mae = mae_grad_raw(pred, gt);
    let edge = edge_grad_raw(width, height, pred, gt);
    let ssim = ssim_loss_grad_raw(width, height, pred, gt, params);
    weighted_sum(weights, &ssim, &edge, &mae)
}

pub(crate) fn weighted_sum(weights: &LossWeights, ssim: &[f64], edge: &[f64], mae: &[f64]) -> Vec<f64> {
    let (ws, we, wm) = weights.as_tuple();
    ssim.iter()
        .zip(edge)
        .zip(mae)
        .map(|((&s, &e), &m)| ws * s + we * e + wm * m)
        .collect()
}

fn field(pair: &EvalPair<'_>, values: Vec<f64>) -> GradientField {
    GradientField::new(pair.width(), pair.height(), values)
}

pub fn mae_grad(pair: &EvalPair<'_>) -> GradientField {
    field(
        pair,
        mae_grad_raw(pair.prediction().pixels(), pair.ground_truth().pixels()),
    )
}

pub fn edge_grad(pair: &EvalPair<'_>) -> Result<GradientField> {
    check_edge_dims(pair.width(), pair.height())?;
    Ok(field(
        pair,
        edge_grad_raw(
            pair.width(),
            pair.height(),
            pair.prediction().pixels(),
            pair.ground_truth().pixels(),
        ),
    ))
}

pub fn ssim_grad(pair: &EvalPair<'_>, params: &SsimParams) -> Result<GradientField> {
    params.validate_for(pair.width(), pair.height())?;
    Ok(field(
        pair,
        ssim_loss_grad_raw(
            pair.width(),
            pair.height(),
            pair.prediction().pixels(),
            pair.ground_truth().pixels(),
            params,
        ),
    ))
}

pub fn combined_grad(pair: &EvalPair<'_>, weights: &LossWeights, params: &SsimParams) -> Result<GradientField> {
    weights.validate()?;
    check_edge_dims(pair.width(), pair.height())?;
    params.validate_for(pair.width(), pair.height())?;
    let values = combined_grad_raw(
        pair.width(),
        pair.height(),
        pair.prediction().pixels(),
        pair.ground_truth().pixels(),
        weights,
        params,
    );
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DepthError::InvalidInput(format!("gradient is not finite at pixel {i}")));
    }
    Ok(field(pair, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, seed: u64) -> DepthMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DepthMap::from_fn(w, h, 10.0, |_, _| rng.random_range(0.1..9.9)).unwrap()
    }

    #[test]
    fn mae_grad_examples() {
        let gt = random_map(4, 4, 1);
        let p = EvalPair::new(&gt, &gt).unwrap();
        assert!(mae_grad(&p).values().iter().all(|&v| v == 0.0));

        let base = DepthMap::filled(2, 2, 3.0, 10.0).unwrap();
        let up = base.map(|v| v + 1.0).unwrap();
        let g = mae_grad(&EvalPair::new(&up, &base).unwrap());
        assert_eq!(g.values(), &[0.25; 4]);
    }

    #[test]
    fn edge_grad_zero_for_offsets() {
        let gt = random_map(7, 5, 2);
        let pred = gt.map(|v| v + 0.05).unwrap();
        let g = edge_grad(&EvalPair::new(&pred, &gt).unwrap()).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_grad_one_dimensional_chain() {
        // Two identical increasing rows against a flat ground truth: the
        // vertical differences vanish and each row is the 1-D chain, whose
        // adjoint cancels in the interior and leaves -/+ 1/Nx at the ends,
        // with Nx = 2 (n - 1) horizontal differences.
        let n = 6;
        let pred = DepthMap::from_fn(n, 2, 10.0, |_, c| 1.0 + c as f64).unwrap();
        let gt = DepthMap::filled(n, 2, 4.0, 10.0).unwrap();
        let g = edge_grad(&EvalPair::new(&pred, &gt).unwrap()).unwrap();
        let nx = (2 * (n - 1)) as f64;
        for r in 0..2 {
            assert_eq!(g.get(r, 0), -1.0 / nx);
            assert_eq!(g.get(r, n - 1), 1.0 / nx);
            for c in 1..n - 1 {
                assert_eq!(g.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn edge_grad_rejects_single_row() {
        let m = DepthMap::filled(5, 1, 1.0, 10.0).unwrap();
        assert!(edge_grad(&EvalPair::new(&m, &m).unwrap()).is_err());
    }

    #[test]
    fn ssim_grad_vanishes_at_equality() {
        let gt = random_map(16, 16, 3);
        let p = EvalPair::new(&gt, &gt).unwrap();
        for params in [SsimParams::default(), SsimParams::uniform(5)] {
            assert!(ssim_grad(&p, &params).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn ssim_grad_uniform_for_constant_maps() {
        let a = DepthMap::filled(12, 12, 1.0, 10.0).unwrap();
        let b = DepthMap::filled(12, 12, 2.0, 10.0).unwrap();
        let g = ssim_grad(&EvalPair::new(&a, &b).unwrap(), &SsimParams::uniform(5)).unwrap();
        // Border pixels are covered by fewer windows, so "uniform" holds on the
        // interior region every window placement covers equally.
        let first = g.get(4, 4);
        assert!(first != 0.0);
        for r in 4..8 {
            for c in 4..8 {
                assert!((g.get(r, c) - first).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn combined_is_weighted_sum() {
        let a = random_map(16, 16, 4);
        let b = random_map(16, 16, 5);
        let p = EvalPair::new(&a, &b).unwrap();
        let params = SsimParams::default();
        let mae = mae_grad(&p);
        let only = combined_grad(&p, &LossWeights::mae_only(), &params).unwrap();
        assert_eq!(only, mae);

        let w = LossWeights::optimized();
        let c = combined_grad(&p, &w, &params).unwrap();
        let e = edge_grad(&p).unwrap();
        let s = ssim_grad(&p, &params).unwrap();
        for i in 0..c.values().len() {
            let expect = 1.0 * s.values()[i] + 0.2 * e.values()[i] + 0.6 * mae.values()[i];
            assert!((c.values()[i] - expect).abs() <= 1e-12);
        }

        let same = combined_grad(&EvalPair::new(&a, &a).unwrap(), &w, &params).unwrap();
        assert!(same.max_abs() < 1e-10);
    }
}
