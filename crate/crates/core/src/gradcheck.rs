//! Central finite-difference verification of the analytic gradients.
//!
//! For each pixel `i` the numeric derivative is
//! `(L(pred + eps e_i) - L(pred - eps e_i)) / (2 eps)`, evaluated on an
//! unclamped double-double copy of the prediction, and compared with the
//! analytic entry by `|analytic - numeric| / max(1e-8, |numeric|)`. Pixels
//! within `2 eps` of a kink of an absolute value (MAE residual or edge
//! difference) are skipped: the loss is not differentiable there.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::EvalPair;
use crate::error::{DepthError, Result};
use crate::gradients::{combined_grad, edge_grad, mae_grad, ssim_grad, GradientField};
use crate::losses::{
    check_edge_dims, edge_raw, mae_raw, ssim_index_raw, ssim_loss_from_index, LossWeights, SsimParams,
};
use crate::scalar::{DoubleDouble, Scalar};

/// Floor on the denominator of the relative error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Edge,
    Ssim,
    Combined,
}

impl LossKind {
    /// Report order.
    pub const ALL: [LossKind; 4] = [LossKind::Mae, LossKind::Edge, LossKind::Ssim, LossKind::Combined];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Edge => "edge",
            LossKind::Ssim => "ssim",
            LossKind::Combined => "combined",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DepthError::InvalidInput(format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub max_relative_error: f64,
    /// Row-major index of the pixel with the largest error, if any was checked.
    pub worst_pixel: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

/// Computes the analytic gradient for `loss`.
pub fn analytic_gradient(
    loss: LossKind,
    pair: &EvalPair<'_>,
    params: &SsimParams,
    weights: &LossWeights,
) -> Result<GradientField> {
    match loss {
        LossKind::Mae => Ok(mae_grad(pair)),
        LossKind::Edge => edge_grad(pair),
        LossKind::Ssim => ssim_grad(pair, params),
        LossKind::Combined => combined_grad(pair, weights, params),
    }
}

pub fn finite_diff_check(
    loss: LossKind,
    pair: &EvalPair<'_>,
    epsilon: f64,
    params: &SsimParams,
    weights: &LossWeights,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient(loss, pair, params, weights)?;
    finite_diff_check_against(loss, pair, epsilon, params, weights, &analytic)
}

/// Like [`finite_diff_check`] but compares against a caller-supplied field.
pub fn finite_diff_check_against(
    loss: LossKind,
    pair: &EvalPair<'_>,
    epsilon: f64,
    params: &SsimParams,
    weights: &LossWeights,
    analytic: &GradientField,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-2).contains(&epsilon) {
        return Err(DepthError::InvalidParams(format!(
            "finite-difference step must lie in [1e-7, 1e-2], got {epsilon}"
        )));
    }
    let (w, h) = (pair.width(), pair.height());
    if analytic.width() != w || analytic.height() != h {
        return Err(DepthError::InvalidInput(format!(
            "gradient field is {}x{}, pair is {w}x{h}",
            analytic.width(),
            analytic.height()
        )));
    }
    match loss {
        LossKind::Mae => {}
        LossKind::Edge => check_edge_dims(w, h)?,
        LossKind::Ssim => params.validate_for(w, h)?,
        LossKind::Combined => {
            weights.validate()?;
            check_edge_dims(w, h)?;
            params.validate_for(w, h)?;
        }
    }

    let pred = pair.prediction().pixels();
    let gt = pair.ground_truth().pixels();
    let skip = tie_mask(loss, w, h, pred, gt, weights, 2.0 * epsilon);
    let base: Vec<DoubleDouble> = pred.iter().map(|&v| DoubleDouble::from_f64(v)).collect();
    let eps = DoubleDouble::from_f64(epsilon);

    let errors: Vec<Option<f64>> = (0..pred.len())
        .into_par_iter()
        .map_init(
            || base.clone(),
            |x, i| {
                if skip[i] {
                    return None;
                }
                let center = x[i];
                x[i] = center + eps;
                let plus = evaluate(loss, w, h, x, gt, params, weights);
                x[i] = center - eps;
                let minus = evaluate(loss, w, h, x, gt, params, weights);
                x[i] = center;
                let numeric = ((plus - minus) / (eps + eps)).to_f64();
                let a = analytic.values()[i];
                Some((a - numeric).abs() / numeric.abs().max(RELATIVE_ERROR_FLOOR))
            },
        )
        .collect();

    let mut report = GradCheckReport {
        loss,
        max_relative_error: 0.0,
        worst_pixel: None,
        checked: 0,
        skipped: 0,
    };
    for (i, e) in errors.into_iter().enumerate() {
        match e {
            None => report.skipped += 1,
            Some(e) => {
                report.checked += 1;
                if report.worst_pixel.is_none() || e > report.max_relative_error || e.is_nan() {
                    report.max_relative_error = e;
                    report.worst_pixel = Some(i);
                }
            }
        }
    }
    Ok(report)
}

fn evaluate<T: Scalar>(
    loss: LossKind,
    w: usize,
    h: usize,
    pred: &[T],
    gt: &[f64],
    params: &SsimParams,
    weights: &LossWeights,
) -> T {
    match loss {
        LossKind::Mae => mae_raw(pred, gt),
        LossKind::Edge => edge_raw(w, h, pred, gt),
        LossKind::Ssim => ssim_loss_from_index(ssim_index_raw(w, h, pred, gt, params)),
        LossKind::Combined => {
            let (ws, we, wm) = weights.as_tuple();
            let ssim = ssim_loss_from_index(ssim_index_raw(w, h, pred, gt, params));
            T::from_f64(ws) * ssim + T::from_f64(we) * edge_raw(w, h, pred, gt) + T::from_f64(wm) * mae_raw(pred, gt)
        }
    }
}

/// Marks pixels whose perturbation by up to `band / 2` could cross a kink.
fn tie_mask(
    loss: LossKind,
    w: usize,
    h: usize,
    pred: &[f64],
    gt: &[f64],
    weights: &LossWeights,
    band: f64,
) -> Vec<bool> {
    let (mae, edge) = match loss {
        LossKind::Mae => (true, false),
        LossKind::Edge => (false, true),
        LossKind::Ssim => (false, false),
        LossKind::Combined => (weights.w_mae > 0.0, weights.w_edge > 0.0),
    };
    let mut skip = vec![false; pred.len()];
    if mae {
        for (s, (&p, &g)) in skip.iter_mut().zip(pred.iter().zip(gt)) {
            *s |= (p - g).abs() < band;
        }
    }
    if edge {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w && ((pred[i + 1] - pred[i]) - (gt[i + 1] - gt[i])).abs() < band {
                    skip[i] = true;
                    skip[i + 1] = true;
                }
                if r + 1 < h && ((pred[i + w] - pred[i]) - (gt[i + w] - gt[i])).abs() < band {
                    skip[i] = true;
                    skip[i + w] = true;
                }
            }
        }
    }
    skip
}
