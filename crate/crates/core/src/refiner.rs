//! Gradient-descent refinement of a depth map against its ground truth.
//!
//! The prediction's pixels are the parameters. Each iteration evaluates the
//! combined loss and its gradient at the current iterate, records the
//! breakdown, then takes one bias-corrected Adam step and projects back onto
//! `[0, depth_cap]`. The best iterate seen is returned, so the final loss
//! never exceeds the initial one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, EvalPair};
use crate::error::{DepthError, Result};
use crate::gradients::{edge_grad_raw, mae_grad_raw, ssim_index_grad_raw, weighted_sum};
use crate::losses::{check_edge_dims, edge_raw, mae_raw, ssim_loss_from_index, LossBreakdown, LossWeights, SsimParams};

/// Adam rate used when the loss trains encoder-decoder network weights.
///
/// Adam moves each parameter by at most about one learning rate per step, so
/// in pixel space this rate caps a 500-step refinement at 5 cm of total
/// movement per pixel. [`OptConfig::default`] uses [`PIXEL_LEARNING_RATE`].
pub const NETWORK_LEARNING_RATE: f64 = 1e-4;

/// Default step scale for pixel-space refinement: a thousandth of the 10 m
/// depth cap, so the default 500 iterations can traverse several meters.
pub const PIXEL_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
    pub max_iters: usize,
    /// Consecutive non-improving iterations tolerated before stopping.
    pub patience: usize,
    /// Smallest loss decrease that counts as an improvement.
    pub min_improvement: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: PIXEL_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
            max_iters: 500,
            patience: 25,
            min_improvement: 1e-6,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DepthError::InvalidParams(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon_hat.is_finite() && self.epsilon_hat > 0.0) {
            return bad(format!("epsilon_hat must be positive, got {}", self.epsilon_hat));
        }
        if self.max_iters == 0 || self.patience == 0 {
            return bad("max_iters and patience must be at least 1".into());
        }
        if !(self.min_improvement.is_finite() && self.min_improvement >= 0.0) {
            return bad(format!("min_improvement must be >= 0, got {}", self.min_improvement));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Patience,
    /// The best loss is within `min_improvement` of zero, or the gradient vanished.
    Converged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIters => "max_iters",
            StopReason::Patience => "patience",
            StopReason::Converged => "converged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based; iteration 1 evaluates the initial map.
    pub iteration: usize,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct RefineTrace {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub final_map: DepthMap,
    pub stop_reason: StopReason,
}

impl RefineTrace {
    pub fn initial(&self) -> &LossBreakdown {
        &self.records[0].breakdown
    }

    /// Breakdown of the returned (best) iterate.
    pub fn best(&self) -> &LossBreakdown {
        &self.records[self.best_iteration - 1].breakdown
    }

    /// Columns `iter,mae,edge,ssim_loss,combined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,mae,edge,ssim_loss,combined\n");
        for r in &self.records {
            let b = &r.breakdown;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, b.mae, b.edge, b.ssim_loss, b.combined
            ));
        }
        out
    }
}

struct Evaluation {
    breakdown: LossBreakdown,
    grad: Vec<f64>,
}

fn evaluate(w: usize, h: usize, x: &[f64], gt: &[f64], weights: &LossWeights, params: &SsimParams) -> Evaluation {
    let (index, mut ssim) = ssim_index_grad_raw(w, h, x, gt, params);
    let ssim_loss = ssim_loss_from_index(index);
    let scale = if (0.0..=1.0).contains(&(0.5 * (1.0 - index))) {
        -0.5
    } else {
        0.0
    };
    ssim.iter_mut().for_each(|g| *g *= scale);
    let edge = edge_grad_raw(w, h, x, gt);
    let mae = mae_grad_raw(x, gt);
    Evaluation {
        breakdown: LossBreakdown::from_terms(mae_raw(x, gt), edge_raw(w, h, x, gt), ssim_loss, weights),
        grad: weighted_sum(weights, &ssim, &edge, &mae),
    }
}

pub fn refine(
    initial: &DepthMap,
    gt: &DepthMap,
    weights: &LossWeights,
    params: &SsimParams,
    cfg: &OptConfig,
) -> Result<RefineTrace> {
    let pair = EvalPair::new(initial, gt)?;
    weights.validate()?;
    cfg.validate()?;
    check_edge_dims(pair.width(), pair.height())?;
    params.validate_for(pair.width(), pair.height())?;

    let (w, h) = (initial.width(), initial.height());
    let cap = initial.depth_cap();
    let target = gt.pixels();
    let mut x = initial.pixels().to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let (mut beta1_t, mut beta2_t) = (1.0, 1.0);

    let mut records = Vec::new();
    let mut best = (f64::INFINITY, 0, x.clone());
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxIters;

    for iteration in 1..=cfg.max_iters {
        let eval = evaluate(w, h, &x, target, weights, params);
        let loss = eval.breakdown.combined;
        if !loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(DepthError::Diverged { iteration });
        }
        records.push(IterationRecord {
            iteration,
            breakdown: eval.breakdown,
        });

        if loss < best.0 - cfg.min_improvement || best.1 == 0 {
            best = (loss, iteration, x.clone());
            stale = 0;
        } else {
            if loss < best.0 {
                best = (loss, iteration, x.clone());
            }
            stale += 1;
        }

        if best.0 <= cfg.min_improvement || eval.grad.iter().all(|&g| g == 0.0) {
            stop_reason = StopReason::Converged;
            break;
        }
        if stale >= cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
        if iteration == cfg.max_iters {
            break;
        }

        beta1_t *= cfg.beta1;
        beta2_t *= cfg.beta2;
        for i in 0..x.len() {
            let g = eval.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / (1.0 - beta1_t);
            let v_hat = v[i] / (1.0 - beta2_t);
            x[i] = (x[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon_hat)).clamp(0.0, cap);
        }
    }

    let (_, best_iteration, best_x) = best;
    Ok(RefineTrace {
        records,
        best_iteration,
        final_map: DepthMap::from_raw_unchecked(w, h, best_x, cap),
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::mae_loss;
    use crate::synthetic::{generate_scene, SceneKind, SceneSpec};

    fn scene() -> DepthMap {
        generate_scene(&SceneSpec::new(SceneKind::Sphere, 24, 24, 1.0, 6.0, 3)).unwrap()
    }

    #[test]
    fn defaults() {
        let c = OptConfig::default();
        assert_eq!(
            (c.learning_rate, c.beta1, c.beta2, c.epsilon_hat),
            (1e-2, 0.9, 0.999, 1e-8)
        );
        assert_eq!((c.max_iters, c.patience, c.min_improvement), (500, 25, 1e-6));
    }

    #[test]
    fn ground_truth_start_converges_immediately() {
        let gt = scene();
        let t = refine(
            &gt,
            &gt,
            &LossWeights::optimized(),
            &SsimParams::default(),
            &OptConfig::default(),
        )
        .unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.stop_reason, StopReason::Converged);
        assert_eq!(t.best().combined, 0.0);
        assert_eq!(t.final_map, gt);
    }

    #[test]
    fn pure_mae_removes_constant_offset() {
        let gt = scene();
        let start = gt.map(|v| v + 0.5).unwrap();
        let cfg = OptConfig::default();
        let t = refine(&start, &gt, &LossWeights::mae_only(), &SsimParams::default(), &cfg).unwrap();
        let mae = mae_loss(&EvalPair::new(&t.final_map, &gt).unwrap());
        assert!(
            mae < 0.05,
            "{mae} after {} iterations ({})",
            t.records.len(),
            t.stop_reason
        );
    }

    #[test]
    fn pure_mae_keeps_offset_spatially_constant() {
        let gt = scene();
        let start = gt.map(|v| v + 0.25).unwrap();
        let cfg = OptConfig {
            max_iters: 10,
            ..OptConfig::default()
        };
        let t = refine(&start, &gt, &LossWeights::mae_only(), &SsimParams::default(), &cfg).unwrap();
        let diffs: Vec<f64> = t
            .final_map
            .pixels()
            .iter()
            .zip(gt.pixels())
            .map(|(a, b)| a - b)
            .collect();
        let spread = diffs.iter().cloned().fold(f64::MIN, f64::max) - diffs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-9, "{spread}");
        assert!((diffs[0] - (0.25 - 9.0 * 0.01)).abs() < 1e-5, "{}", diffs[0]);
    }

    #[test]
    fn best_so_far_and_determinism() {
        let gt = scene();
        let start = gt.map(|v| (v * 1.1).min(10.0)).unwrap();
        let cfg = OptConfig {
            learning_rate: 0.05,
            max_iters: 60,
            ..OptConfig::default()
        };
        let a = refine(&start, &gt, &LossWeights::optimized(), &SsimParams::default(), &cfg).unwrap();
        let b = refine(&start, &gt, &LossWeights::optimized(), &SsimParams::default(), &cfg).unwrap();
        assert!(a.best().combined <= a.initial().combined);
        let min = a
            .records
            .iter()
            .map(|r| r.breakdown.combined)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best().combined, min);
        assert!(a.records.len() <= cfg.max_iters);
        assert_eq!(a.final_map, b.final_map);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn patience_stops_a_stalled_run() {
        let gt = scene();
        let start = gt.map(|v| v + 0.2).unwrap();
        let cfg = OptConfig {
            learning_rate: 1e-12,
            patience: 3,
            ..OptConfig::default()
        };
        let t = refine(&start, &gt, &LossWeights::optimized(), &SsimParams::default(), &cfg).unwrap();
        assert_eq!(t.stop_reason, StopReason::Patience);
        assert_eq!(t.records.len(), 4);
    }

    #[test]
    fn trace_csv_schema() {
        let gt = scene();
        let t = refine(
            &gt,
            &gt,
            &LossWeights::optimized(),
            &SsimParams::default(),
            &OptConfig::default(),
        )
        .unwrap();
        assert_eq!(t.to_csv(), "iter,mae,edge,ssim_loss,combined\n1,0,0,0,0\n");
    }

    #[test]
    fn rejects_bad_config() {
        let gt = scene();
        for cfg in [
            OptConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            OptConfig {
                beta1: 1.0,
                ..Default::default()
            },
            OptConfig {
                max_iters: 0,
                ..Default::default()
            },
            OptConfig {
                patience: 0,
                ..Default::default()
            },
        ] {
            assert!(refine(&gt, &gt, &LossWeights::optimized(), &SsimParams::default(), &cfg).is_err());
        }
    }
}
