//! Depth maps and prediction/ground-truth pairs.
//!
//! A [`DepthMap`] is a row-major grid of metric depths bounded by a cap
//! (10 m by default, the sensor limit of the indoor data the loss was built
//! for). Every value is finite and lies in `[0, cap]`; the constructors
//! enforce that so downstream code never re-validates.

use crate::error::{DepthError, Result};

/// Default depth cap in meters.
pub const DEFAULT_DEPTH_CAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    depth_cap: f64,
}

impl DepthMap {
    /// Builds a map from row-major pixels, validating every value against `depth_cap`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, depth_cap: f64) -> Result<Self> {
        Self::check_shape(width, height, pixels.len())?;
        check_cap(depth_cap)?;
        for (index, &value) in pixels.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DepthError::InvalidPixel {
                    row: index / width,
                    col: index % width,
                    value,
                });
            }
            if value > depth_cap {
                return Err(DepthError::AboveCap {
                    index,
                    value,
                    cap: depth_cap,
                });
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            depth_cap,
        })
    }

    /// Same as [`DepthMap::new`] with the default 10 m cap.
    pub fn with_default_cap(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::new(width, height, pixels, DEFAULT_DEPTH_CAP)
    }

    /// Builds a map by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        depth_cap: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self::new(width, height, pixels, depth_cap)
    }

    pub fn filled(width: usize, height: usize, value: f64, depth_cap: f64) -> Result<Self> {
        Self::check_shape(width, height, width * height)?;
        Self::new(width, height, vec![value; width * height], depth_cap)
    }

    fn check_shape(width: usize, height: usize, len: usize) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(DepthError::InvalidInput(format!(
                "depth map must be at least 1x1, got {width}x{height}"
            )));
        }
        if width.checked_mul(height) != Some(len) {
            return Err(DepthError::InvalidInput(format!(
                "{len} pixels cannot fill a {width}x{height} grid"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels, the `N` every mean divides by.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn depth_cap(&self) -> f64 {
        self.depth_cap
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Applies `f` to every pixel and re-validates the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| f(v)).collect(),
            self.depth_cap,
        )
    }

    pub(crate) fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.depth_cap == other.depth_cap
    }

    /// Replaces the pixels without validation. Callers guarantee `[0, cap]`.
    pub(crate) fn from_raw_unchecked(width: usize, height: usize, pixels: Vec<f64>, depth_cap: f64) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
            depth_cap,
        }
    }
}

fn check_cap(cap: f64) -> Result<()> {
    if cap.is_finite() && cap > 0.0 {
        Ok(())
    } else {
        Err(DepthError::InvalidParams(format!(
            "depth cap must be finite and positive, got {cap}"
        )))
    }
}

/// Clamps every pixel to `cap` and adopts `cap` as the map's depth cap.
///
/// Takes raw pixels rather than a [`DepthMap`] because the input is, by
/// definition, allowed to exceed the cap.
pub fn clamp_to_cap(width: usize, height: usize, pixels: &[f64], cap: f64) -> Result<DepthMap> {
    check_cap(cap)?;
    DepthMap::check_shape(width, height, pixels.len())?;
    let mut out = Vec::with_capacity(pixels.len());
    for (index, &value) in pixels.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(DepthError::InvalidPixel {
                row: index / width,
                col: index % width,
                value,
            });
        }
        out.push(value.min(cap));
    }
    Ok(DepthMap::from_raw_unchecked(width, height, out, cap))
}

impl DepthMap {
    /// Re-caps an existing map. Pixels above the new cap are clamped.
    pub fn clamp_to_cap(&self, cap: f64) -> Result<DepthMap> {
        clamp_to_cap(self.width, self.height, &self.pixels, cap)
    }

    /// Halves both dimensions by averaging each 2x2 block.
    pub fn downsample_half(&self) -> Result<DepthMap> {
        if !self.width.is_multiple_of(2) {
            return Err(DepthError::OddDimension {
                axis: "width",
                size: self.width,
            });
        }
        if !self.height.is_multiple_of(2) {
            return Err(DepthError::OddDimension {
                axis: "height",
                size: self.height,
            });
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let (r, c) = (2 * row, 2 * col);
                let sum = self.get(r, c) + self.get(r, c + 1) + self.get(r + 1, c) + self.get(r + 1, c + 1);
                // The mean of four values in [0, cap] stays in [0, cap], but
                // rounding of the sum can overshoot the cap by one ulp.
                out.push((sum * 0.25).min(self.depth_cap));
            }
        }
        Ok(DepthMap::from_raw_unchecked(w, h, out, self.depth_cap))
    }
}

/// A prediction and its ground truth, guaranteed to share shape and cap.
#[derive(Debug, Clone, Copy)]
pub struct EvalPair<'a> {
    prediction: &'a DepthMap,
    ground_truth: &'a DepthMap,
}

impl<'a> EvalPair<'a> {
    pub fn new(prediction: &'a DepthMap, ground_truth: &'a DepthMap) -> Result<Self> {
        if !prediction.same_shape(ground_truth) {
            return Err(DepthError::DimensionMismatch {
                pred_w: prediction.width,
                pred_h: prediction.height,
                pred_cap: prediction.depth_cap,
                gt_w: ground_truth.width,
                gt_h: ground_truth.height,
                gt_cap: ground_truth.depth_cap,
            });
        }
        Ok(Self {
            prediction,
            ground_truth,
        })
    }

    pub fn prediction(&self) -> &'a DepthMap {
        self.prediction
    }

    pub fn ground_truth(&self) -> &'a DepthMap {
        self.ground_truth
    }

    pub fn width(&self) -> usize {
        self.prediction.width
    }

    pub fn height(&self) -> usize {
        self.prediction.height
    }

    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }

    /// The same pair with prediction and ground truth exchanged.
    pub fn swapped(&self) -> EvalPair<'a> {
        EvalPair {
            prediction: self.ground_truth,
            ground_truth: self.prediction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_pixels() {
        let err = DepthMap::with_default_cap(2, 1, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, DepthError::InvalidPixel { row: 0, col: 1, .. }));
        let err = DepthMap::with_default_cap(1, 2, vec![1.0, -0.5]).unwrap_err();
        assert!(matches!(err, DepthError::InvalidPixel { row: 1, col: 0, .. }));
        let err = DepthMap::with_default_cap(1, 1, vec![10.5]).unwrap_err();
        assert!(matches!(err, DepthError::AboveCap { index: 0, .. }));
        assert!(DepthMap::with_default_cap(2, 2, vec![1.0; 3]).is_err());
        assert!(DepthMap::with_default_cap(0, 0, vec![]).is_err());
        assert!(DepthMap::new(1, 1, vec![0.0], 0.0).is_err());
    }

    #[test]
    fn zero_depth_is_allowed() {
        assert!(DepthMap::with_default_cap(1, 1, vec![0.0]).is_ok());
    }

    #[test]
    fn clamp_examples() {
        let m = clamp_to_cap(2, 2, &[12.0; 4], 10.0).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 10.0));
        assert_eq!(m.depth_cap(), 10.0);

        let m = clamp_to_cap(2, 2, &[3.0; 4], 10.0).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 3.0));

        let m = clamp_to_cap(3, 1, &[4.0, 9.9, 10.1], 10.0).unwrap();
        assert_eq!(m.pixels(), &[4.0, 9.9, 10.0]);
    }

    #[test]
    fn clamp_names_offending_pixel() {
        let err = clamp_to_cap(3, 2, &[1.0, 1.0, 1.0, 1.0, f64::INFINITY, 1.0], 10.0).unwrap_err();
        assert!(matches!(err, DepthError::InvalidPixel { row: 1, col: 1, .. }), "{err}");
        let err = clamp_to_cap(1, 1, &[-1.0], 10.0).unwrap_err();
        assert!(matches!(err, DepthError::InvalidPixel { row: 0, col: 0, .. }));
    }

    #[test]
    fn downsample_examples() {
        let m = DepthMap::filled(640, 480, 2.0, 10.0).unwrap();
        let half = m.downsample_half().unwrap();
        assert_eq!((half.width(), half.height()), (320, 240));
        assert!(half.pixels().iter().all(|&v| v == 2.0));

        let block = DepthMap::with_default_cap(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(block.downsample_half().unwrap().pixels(), &[2.5]);
    }

    #[test]
    fn downsample_rejects_odd_dimensions() {
        let m = DepthMap::filled(3, 4, 1.0, 10.0).unwrap();
        assert!(matches!(
            m.downsample_half().unwrap_err(),
            DepthError::OddDimension { axis: "width", size: 3 }
        ));
        let m = DepthMap::filled(4, 5, 1.0, 10.0).unwrap();
        assert!(matches!(
            m.downsample_half().unwrap_err(),
            DepthError::OddDimension {
                axis: "height",
                size: 5
            }
        ));
    }

    #[test]
    fn pair_requires_matching_shape_and_cap() {
        let a = DepthMap::filled(2, 2, 1.0, 10.0).unwrap();
        let b = DepthMap::filled(2, 3, 1.0, 10.0).unwrap();
        let c = DepthMap::filled(2, 2, 1.0, 5.0).unwrap();
        assert!(EvalPair::new(&a, &a).is_ok());
        assert!(matches!(
            EvalPair::new(&a, &b),
            Err(DepthError::DimensionMismatch { .. })
        ));
        assert!(EvalPair::new(&a, &c).is_err());
    }

    fn even_map() -> impl Strategy<Value = DepthMap> {
        (1usize..8, 1usize..8).prop_flat_map(|(hw, hh)| {
            proptest::collection::vec(0.0f64..=10.0, 4 * hw * hh)
                .prop_map(move |px| DepthMap::with_default_cap(2 * hw, 2 * hh, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn downsample_of_constant_is_constant(v in 0.0f64..=10.0, hw in 1usize..10, hh in 1usize..10) {
            let m = DepthMap::filled(2 * hw, 2 * hh, v, 10.0).unwrap();
            let half = m.downsample_half().unwrap();
            prop_assert_eq!((half.width(), half.height()), (hw, hh));
            prop_assert!(half.pixels().iter().all(|&p| p == v));
        }

        #[test]
        fn downsample_preserves_mean(m in even_map()) {
            let before = m.mean();
            let after = m.downsample_half().unwrap().mean();
            prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
        }

        #[test]
        fn clamp_is_idempotent(px in proptest::collection::vec(0.0f64..20.0, 12), cap in 0.5f64..15.0) {
            let once = clamp_to_cap(4, 3, &px, cap).unwrap();
            let twice = once.clamp_to_cap(cap).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
