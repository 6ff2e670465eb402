//! The three loss terms and their weighted combination.
//!
//! ```text
//! L_mae      = mean |gt - pred|
//! L_edge     = mean_x |dx pred - dx gt| + mean_y |dy pred - dy gt|
//! L_ssim     = clip(0.5 * (1 - SSIM(pred, gt)), 0, 1)
//! L_combined = w_ssim * L_ssim + w_edge * L_edge + w_mae * L_mae
//! ```
//!
//! `dx`/`dy` are forward differences, defined only where the forward neighbor
//! exists; each directional mean runs over its own domain. SSIM is the mean
//! of the local index over every valid window placement.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::depth::{EvalPair, DEFAULT_DEPTH_CAP};
use crate::error::{DepthError, Result};
use crate::scalar::Scalar;
use crate::window::{Window, WindowKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_ssim: f64,
    pub w_edge: f64,
    pub w_mae: f64,
}

impl LossWeights {
    pub fn new(w_ssim: f64, w_edge: f64, w_mae: f64) -> Result<Self> {
        let w = Self { w_ssim, w_edge, w_mae };
        w.validate()?;
        Ok(w)
    }

    /// `1.0 * L_ssim + 0.2 * L_edge + 0.6 * L_mae`, the weighting selected by
    /// random search over `[0.2, 0.4, 0.6, 0.8, 1]`.
    pub fn optimized() -> Self {
        Self {
            w_ssim: 1.0,
            w_edge: 0.2,
            w_mae: 0.6,
        }
    }

    pub fn mae_only() -> Self {
        Self {
            w_ssim: 0.0,
            w_edge: 0.0,
            w_mae: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_ssim, self.w_edge, self.w_mae];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DepthError::InvalidParams(format!(
                "loss weights must be finite and non-negative, got {self}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(DepthError::InvalidParams(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_ssim: self.w_ssim * factor,
            w_edge: self.w_edge * factor,
            w_mae: self.w_mae * factor,
        }
    }

    pub(crate) fn as_tuple(&self) -> (f64, f64, f64) {
        (self.w_ssim, self.w_edge, self.w_mae)
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w_ssim={},w_edge={},w_mae={}", self.w_ssim, self.w_edge, self.w_mae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window_size: usize,
    pub window: WindowKind,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` in meters; `C1 = (k1 L)^2`, `C2 = (k2 L)^2`.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window: WindowKind::default(),
            k1: 0.01,
            k2: 0.03,
            dynamic_range: DEFAULT_DEPTH_CAP,
        }
    }
}

impl SsimParams {
    pub fn uniform(window_size: usize) -> Self {
        Self {
            window_size,
            window: WindowKind::Uniform,
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn window_weights(&self) -> Window {
        Window::new(self.window_size, self.window)
    }

    /// Checks the parameters on their own, independent of any image.
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(DepthError::InvalidParams(format!(
                "SSIM window size must be odd and at least 3, got {}",
                self.window_size
            )));
        }
        if let WindowKind::Gaussian { sigma } = self.window {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(DepthError::InvalidParams(format!(
                    "gaussian sigma must be positive, got {sigma}"
                )));
            }
        }
        for (name, v) in [("k1", self.k1), ("k2", self.k2), ("dynamic_range", self.dynamic_range)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DepthError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(DepthError::InvalidParams("C1 and C2 must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if self.window_size > width.min(height) {
            return Err(DepthError::InvalidParams(format!(
                "SSIM window {} does not fit a {width}x{height} map",
                self.window_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mae: f64,
    pub edge: f64,
    pub ssim_loss: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub(crate) fn from_terms(mae: f64, edge: f64, ssim_loss: f64, weights: &LossWeights) -> Self {
        Self {
            mae,
            edge,
            ssim_loss,
            combined: weights.w_ssim * ssim_loss + weights.w_edge * edge + weights.w_mae * mae,
        }
    }
}

pub(crate) fn check_edge_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(DepthError::InvalidInput(format!(
            "edge loss needs at least 2x2 pixels, got {width}x{height}"
        )));
    }
    Ok(())
}

// Raw kernels, generic so the gradient checker can re-evaluate them in
// extended precision. `gt` is always f64: only the prediction is perturbed.

pub(crate) fn mae_raw<T: Scalar>(pred: &[T], gt: &[f64]) -> T {
    let mut sum = T::zero();
    for (&p, &g) in pred.iter().zip(gt) {
        sum = sum + (T::from_f64(g) - p).abs();
    }
    sum / T::from_f64(pred.len() as f64)
}

pub(crate) fn edge_raw<T: Scalar>(width: usize, height: usize, pred: &[T], gt: &[f64]) -> T {
    let mut sx = T::zero();
    let mut sy = T::zero();
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if c + 1 < width {
                let d = (pred[i + 1] - pred[i]) - T::from_f64(gt[i + 1] - gt[i]);
                sx = sx + d.abs();
            }
            if r + 1 < height {
                let d = (pred[i + width] - pred[i]) - T::from_f64(gt[i + width] - gt[i]);
                sy = sy + d.abs();
            }
        }
    }
    let nx = (height * (width - 1)) as f64;
    let ny = ((height - 1) * width) as f64;
    sx / T::from_f64(nx) + sy / T::from_f64(ny)
}

/// Windowed first and second moments of `(x, y)` at every valid placement.
pub(crate) struct Moments<T> {
    pub mu_x: Vec<T>,
    pub mu_y: Vec<T>,
    pub var_x: Vec<T>,
    pub var_y: Vec<T>,
    pub cov: Vec<T>,
}

pub(crate) fn moments<T: Scalar>(width: usize, height: usize, x: &[T], y: &[f64], window: &Window) -> Moments<T> {
    let y: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
    let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.iter().zip(&y).map(|(&a, &b)| a * b).collect();
    let mu_x = window.filter_valid(width, height, x);
    let mu_y = window.filter_valid(width, height, &y);
    let exx = window.filter_valid(width, height, &xx);
    let eyy = window.filter_valid(width, height, &yy);
    let exy = window.filter_valid(width, height, &xy);
    let var_x = exx.iter().zip(&mu_x).map(|(&e, &m)| e - m * m).collect();
    let var_y = eyy.iter().zip(&mu_y).map(|(&e, &m)| e - m * m).collect();
    let cov = exy
        .iter()
        .zip(mu_x.iter().zip(&mu_y))
        .map(|(&e, (&mx, &my))| e - mx * my)
        .collect();
    Moments {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

pub(crate) fn ssim_index_raw<T: Scalar>(width: usize, height: usize, pred: &[T], gt: &[f64], params: &SsimParams) -> T {
    let window = params.window_weights();
    let m = moments(width, height, pred, gt, &window);
    let c1 = T::from_f64(params.c1());
    let c2 = T::from_f64(params.c2());
    let two = T::from_f64(2.0);
    let mut sum = T::zero();
    for i in 0..m.mu_x.len() {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let num = (two * mx * my + c1) * (two * m.cov[i] + c2);
        let den = (mx * mx + my * my + c1) * (m.var_x[i] + m.var_y[i] + c2);
        sum = sum + num / den;
    }
    sum / T::from_f64(m.mu_x.len() as f64)
}

pub(crate) fn ssim_loss_from_index<T: Scalar>(index: T) -> T {
    let loss = T::from_f64(0.5) * (T::from_f64(1.0) - index);
    if loss < T::zero() {
        T::zero()
    } else if loss > T::from_f64(1.0) {
        T::from_f64(1.0)
    } else {
        loss
    }
}

pub fn mae_loss(pair: &EvalPair<'_>) -> f64 {
    mae_raw(pair.prediction().pixels(), pair.ground_truth().pixels())
}

pub fn edge_loss(pair: &EvalPair<'_>) -> Result<f64> {
    check_edge_dims(pair.width(), pair.height())?;
    Ok(edge_raw(
        pair.width(),
        pair.height(),
        pair.prediction().pixels(),
        pair.ground_truth().pixels(),
    ))
}

pub fn ssim_index(pair: &EvalPair<'_>, params: &SsimParams) -> Result<f64> {
    params.validate_for(pair.width(), pair.height())?;
    Ok(ssim_index_raw(
        pair.width(),
        pair.height(),
        pair.prediction().pixels(),
        pair.ground_truth().pixels(),
        params,
    ))
}

pub fn ssim_loss(pair: &EvalPair<'_>, params: &SsimParams) -> Result<f64> {
    ssim_index(pair, params).map(ssim_loss_from_index)
}

/// All three terms and their weighted sum. Every term is computed even when
/// its weight is zero so the breakdown is always complete.
pub fn combined_loss(pair: &EvalPair<'_>, weights: &LossWeights, params: &SsimParams) -> Result<LossBreakdown> {
    weights.validate()?;
    let mae = mae_loss(pair);
    let edge = edge_loss(pair)?;
    let ssim = ssim_loss(pair, params)?;
    Ok(LossBreakdown::from_terms(mae, edge, ssim, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthMap;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, seed: u64) -> DepthMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DepthMap::from_fn(w, h, 10.0, |_, _| rng.random_range(0.1..9.9)).unwrap()
    }

    fn pair<'a>(a: &'a DepthMap, b: &'a DepthMap) -> EvalPair<'a> {
        EvalPair::new(a, b).unwrap()
    }

    #[test]
    fn mae_examples() {
        let gt = random_map(4, 4, 1);
        assert_eq!(mae_loss(&pair(&gt, &gt)), 0.0);

        let base = DepthMap::filled(3, 3, 2.0, 10.0).unwrap();
        let shifted = base.map(|v| v + 0.5).unwrap();
        assert_eq!(mae_loss(&pair(&shifted, &base)), 0.5);

        let p = DepthMap::with_default_cap(2, 1, vec![1.0, 2.0]).unwrap();
        let g = DepthMap::with_default_cap(2, 1, vec![2.0, 4.0]).unwrap();
        assert_eq!(mae_loss(&pair(&p, &g)), 1.5);
    }

    #[test]
    fn edge_examples() {
        let gt = random_map(6, 5, 2);
        assert_eq!(edge_loss(&pair(&gt, &gt)).unwrap(), 0.0);

        let ramp = DepthMap::from_fn(8, 4, 10.0, |_, c| 0.1 * c as f64).unwrap();
        let flat = DepthMap::filled(8, 4, 3.0, 10.0).unwrap();
        let e = edge_loss(&pair(&flat, &ramp)).unwrap();
        assert!((e - 0.1).abs() < 1e-15, "{e}");
    }

    #[test]
    fn edge_requires_two_by_two() {
        let a = DepthMap::filled(5, 1, 1.0, 10.0).unwrap();
        assert!(matches!(edge_loss(&pair(&a, &a)), Err(DepthError::InvalidInput(_))));
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let a = random_map(16, 16, 3);
        let s = ssim_index(&pair(&a, &a), &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        let ones = DepthMap::filled(16, 16, 1.0, 10.0).unwrap();
        let twos = DepthMap::filled(16, 16, 2.0, 10.0).unwrap();
        for params in [SsimParams::default(), SsimParams::uniform(5)] {
            let s = ssim_index(&pair(&ones, &twos), &params).unwrap();
            // C1 = (0.01 * 10)^2 = 0.01
            let expected = (2.0 * 1.0 * 2.0 + 0.01) / (1.0 + 4.0 + 0.01);
            assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
            assert!((s - 0.800399).abs() < 1e-6);
            let l = ssim_loss(&pair(&ones, &twos), &params).unwrap();
            assert!((l - 0.5 * (1.0 - expected)).abs() < 1e-12);
            assert!((l - 0.099800).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_loss_range_endpoints() {
        assert_eq!(ssim_loss_from_index(1.0), 0.0);
        assert_eq!(ssim_loss_from_index(-1.0), 1.0);
        assert_eq!(ssim_loss_from_index(-1.0 - 1e-15), 1.0);
        assert_eq!(ssim_loss_from_index(1.0 + 1e-15), 0.0);
    }

    #[test]
    fn ssim_params_validation() {
        let a = random_map(8, 8, 4);
        let p = pair(&a, &a);
        assert!(matches!(
            ssim_index(&p, &SsimParams::default()),
            Err(DepthError::InvalidParams(_))
        ));
        assert!(ssim_index(&p, &SsimParams::uniform(4)).is_err());
        assert!(ssim_index(&p, &SsimParams::uniform(1)).is_err());
        let bad = SsimParams {
            k1: 0.0,
            ..SsimParams::uniform(3)
        };
        assert!(ssim_index(&p, &bad).is_err());
        assert!(ssim_index(&p, &SsimParams::uniform(7)).is_ok());
    }

    #[test]
    fn weights_validation_and_display() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 0.0, 1.0).is_err());
        assert!(LossWeights::new(f64::NAN, 0.0, 1.0).is_err());
        assert_eq!(LossWeights::optimized().to_string(), "w_ssim=1,w_edge=0.2,w_mae=0.6");
    }

    #[test]
    fn combined_examples() {
        let gt = random_map(16, 16, 5);
        let b = combined_loss(&pair(&gt, &gt), &LossWeights::optimized(), &SsimParams::default()).unwrap();
        assert_eq!(b.combined, 0.0);

        let pred = random_map(16, 16, 6);
        let p = pair(&pred, &gt);
        let b = combined_loss(&p, &LossWeights::mae_only(), &SsimParams::default()).unwrap();
        assert_eq!(b.combined, mae_loss(&p));

        let b = combined_loss(&p, &LossWeights::optimized(), &SsimParams::default()).unwrap();
        assert_eq!(b.combined, 1.0 * b.ssim_loss + 0.2 * b.edge + 0.6 * b.mae);
    }

    #[test]
    fn combined_rejects_zero_weights() {
        let gt = random_map(16, 16, 5);
        let zero = LossWeights {
            w_ssim: 0.0,
            w_edge: 0.0,
            w_mae: 0.0,
        };
        assert!(combined_loss(&pair(&gt, &gt), &zero, &SsimParams::default()).is_err());
    }

    #[test]
    fn params_deserialize_with_defaults() {
        let p: SsimParams = serde_json::from_str(r#"{"window":{"kind":"uniform"},"window_size":5}"#).unwrap();
        assert_eq!(p, SsimParams::uniform(5));
        assert!(serde_json::from_str::<SsimParams>(r#"{"windowsize":5}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_terms(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let a = random_map(12, 12, seed_a);
            let b = random_map(12, 12, seed_b);
            let (ab, ba) = (pair(&a, &b), pair(&b, &a));
            prop_assert_eq!(mae_loss(&ab), mae_loss(&ba));
            prop_assert!((edge_loss(&ab).unwrap() - edge_loss(&ba).unwrap()).abs() < 1e-14);
            let params = SsimParams::uniform(5);
            let s1 = ssim_index(&ab, &params).unwrap();
            let s2 = ssim_index(&ba, &params).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn edge_ignores_constant_offsets(seed in any::<u64>(), c in 0.0f64..0.09) {
            let a = random_map(10, 7, seed);
            let b = a.map(|v| v + c).unwrap();
            prop_assert!(edge_loss(&pair(&b, &a)).unwrap() < 1e-12);
        }

        #[test]
        fn combined_is_linear_in_weights(seed in any::<u64>(), ws in 0.0f64..2.0, we in 0.0f64..2.0, wm in 0.01f64..2.0) {
            let a = random_map(12, 12, seed);
            let b = random_map(12, 12, seed ^ 0xdead_beef);
            let p = pair(&a, &b);
            let params = SsimParams::uniform(5);
            let w = LossWeights::new(ws, we, wm).unwrap();
            let one = combined_loss(&p, &w, &params).unwrap();
            let two = combined_loss(&p, &w.scaled(2.0), &params).unwrap();
            prop_assert_eq!((one.mae, one.edge, one.ssim_loss), (two.mae, two.edge, two.ssim_loss));
            prop_assert!((two.combined - 2.0 * one.combined).abs() <= 1e-12 * one.combined.max(1.0));
        }
    }
}
