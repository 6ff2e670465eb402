//! SSIM windows and the separable filters built from them.
//!
//! Every window used here is an outer product of a normalized 1-D kernel with
//! itself, so windowed moments cost `O(size)` per pixel per pass. Filtering is
//! valid-region only: an output exists for each placement of the window that
//! fits entirely inside the image.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WindowKind {
    Gaussian { sigma: f64 },
    Uniform,
}

impl Default for WindowKind {
    fn default() -> Self {
        WindowKind::Gaussian { sigma: 1.5 }
    }
}

/// Normalized 1-D taps; the 2-D window weight at `(a, b)` is `taps[a] * taps[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    taps: Vec<f64>,
}

impl Window {
    pub fn new(size: usize, kind: WindowKind) -> Self {
        let raw: Vec<f64> = match kind {
            WindowKind::Uniform => vec![1.0; size],
            WindowKind::Gaussian { sigma } => {
                let center = (size as f64 - 1.0) / 2.0;
                (0..size)
                    .map(|i| {
                        let d = i as f64 - center;
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
        };
        let sum: f64 = raw.iter().sum();
        Self {
            taps: raw.into_iter().map(|t| t / sum).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Output dimensions of a valid-region filter over a `width x height` image.
    pub fn valid_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (width + 1 - self.size(), height + 1 - self.size())
    }

    /// Weighted window sums at every valid placement (row-major, `valid_dims`).
    pub(crate) fn filter_valid<T: Scalar>(&self, width: usize, height: usize, img: &[T]) -> Vec<T> {
        let s = self.size();
        let (ow, oh) = self.valid_dims(width, height);
        let mut horiz = Vec::with_capacity(ow * height);
        for row in img.chunks_exact(width) {
            for c in 0..ow {
                let mut acc = T::zero();
                for (b, &t) in self.taps.iter().enumerate() {
                    acc = acc + row[c + b] * T::from_f64(t);
                }
                horiz.push(acc);
            }
        }
        let mut out = Vec::with_capacity(ow * oh);
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = T::zero();
                for a in 0..s {
                    acc = acc + horiz[(r + a) * ow + c] * T::from_f64(self.taps[a]);
                }
                out.push(acc);
            }
        }
        out
    }

    /// Transpose of [`Window::filter_valid`]: scatters per-placement values back
    /// onto the pixels each placement covers, weighted by the window.
    pub(crate) fn scatter_adjoint(&self, width: usize, height: usize, src: &[f64]) -> Vec<f64> {
        let s = self.size();
        let (ow, oh) = self.valid_dims(width, height);
        debug_assert_eq!(src.len(), ow * oh);
        // Vertical pass: (oh x ow) -> (height x ow).
        let mut vert = vec![0.0; height * ow];
        for r in 0..oh {
            for (a, &t) in self.taps.iter().enumerate() {
                let dst = &mut vert[(r + a) * ow..(r + a + 1) * ow];
                for (d, &v) in dst.iter_mut().zip(&src[r * ow..(r + 1) * ow]) {
                    *d += t * v;
                }
            }
        }
        // Horizontal pass: (height x ow) -> (height x width).
        let mut out = vec![0.0; height * width];
        for r in 0..height {
            let row = &mut out[r * width..(r + 1) * width];
            for c in 0..ow {
                let v = vert[r * ow + c];
                for b in 0..s {
                    row[c + b] += self.taps[b] * v;
                }
            }
        }
        out
    }
}
