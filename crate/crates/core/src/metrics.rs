//! The six standard depth-evaluation numbers: threshold accuracies
//! `delta1..3`, RMSE, REL and log10 error.
//!
//! The published formulas for log10 error and threshold accuracy differ from
//! the ones the comparison tables were computed with. Both readings are
//! available:
//!
//! | metric | `standard` / `ratio` (default)           | `paper_literal`                          |
//! |--------|------------------------------------------|------------------------------------------|
//! | log10  | `mean |log10 gt - log10 pred|`           | `log10(mean |gt / pred - 1|)`            |
//! | delta  | `frac max(gt/pred, pred/gt) < T`         | `frac |gt - pred| <= T`                  |

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::EvalPair;
use crate::error::{DepthError, Result};

/// Thresholds `1.25, 1.25^2, 1.25^3`.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Log10Variant {
    #[default]
    Standard,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaVariant {
    #[default]
    Ratio,
    PaperLiteral,
}

impl FromStr for Log10Variant {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper" | "paper_literal" => Ok(Self::PaperLiteral),
            _ => Err(DepthError::InvalidInput(format!("unknown log10 variant {s:?}"))),
        }
    }
}

impl FromStr for DeltaVariant {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(Self::Ratio),
            "paper" | "paper_literal" => Ok(Self::PaperLiteral),
            _ => Err(DepthError::InvalidInput(format!("unknown delta variant {s:?}"))),
        }
    }
}

impl fmt::Display for Log10Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::PaperLiteral => "paper_literal",
        })
    }
}

impl fmt::Display for DeltaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ratio => "ratio",
            Self::PaperLiteral => "paper_literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricVariants {
    pub log10: Log10Variant,
    pub delta: DeltaVariant,
}

/// One row of a depth-evaluation table, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub rmse: f64,
    pub rel: f64,
    /// `-inf` (serialized as `null`) for a perfect prediction under the
    /// paper-literal log10 variant.
    pub log10: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["delta1", "delta2", "delta3", "rmse", "rel", "log10"];

    pub fn values(&self) -> [f64; 6] {
        [self.delta1, self.delta2, self.delta3, self.rmse, self.rel, self.log10]
    }

    /// Equal-weight mean over per-image reports. `None` when empty.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let [delta1, delta2, delta3, rmse, rel, log10] = acc.map(|a| a / n);
        Some(MetricsReport {
            delta1,
            delta2,
            delta3,
            rmse,
            rel,
            log10,
        })
    }
}

fn require_positive(pixels: &[f64], operand: &'static str) -> Result<()> {
    match pixels.iter().position(|&v| v <= 0.0) {
        Some(index) => Err(DepthError::NonPositive {
            operand,
            index,
            value: pixels[index],
        }),
        None => Ok(()),
    }
}

fn mean_of(pair: &EvalPair<'_>, f: impl Fn(f64, f64) -> f64) -> f64 {
    let gt = pair.ground_truth().pixels();
    let pred = pair.prediction().pixels();
    let sum: f64 = gt.iter().zip(pred).map(|(&g, &p)| f(g, p)).sum();
    sum / gt.len() as f64
}

/// Mean absolute relative error, `mean |gt - pred| / gt`.
pub fn rel(pair: &EvalPair<'_>) -> Result<f64> {
    require_positive(pair.ground_truth().pixels(), "ground-truth")?;
    Ok(mean_of(pair, |g, p| (g - p).abs() / g))
}

pub fn rmse(pair: &EvalPair<'_>) -> f64 {
    mean_of(pair, |g, p| (g - p) * (g - p)).sqrt()
}

pub fn log10_error(pair: &EvalPair<'_>, variant: Log10Variant) -> Result<f64> {
    require_positive(pair.ground_truth().pixels(), "ground-truth")?;
    require_positive(pair.prediction().pixels(), "predicted")?;
    Ok(match variant {
        Log10Variant::Standard => mean_of(pair, |g, p| (g.log10() - p.log10()).abs()),
        // log10(0) = -inf is the sentinel for a perfect prediction.
        Log10Variant::PaperLiteral => mean_of(pair, |g, p| (g / p - 1.0).abs()).log10(),
    })
}

pub fn threshold_accuracy(pair: &EvalPair<'_>, threshold: f64, variant: DeltaVariant) -> Result<f64> {
    Ok(match variant {
        DeltaVariant::Ratio => {
            require_positive(pair.ground_truth().pixels(), "ground-truth")?;
            require_positive(pair.prediction().pixels(), "predicted")?;
            mean_of(pair, |g, p| if (g / p).max(p / g) < threshold { 1.0 } else { 0.0 })
        }
        DeltaVariant::PaperLiteral => mean_of(pair, |g, p| if (g - p).abs() <= threshold { 1.0 } else { 0.0 }),
    })
}

pub fn full_report(pair: &EvalPair<'_>, variants: MetricVariants) -> Result<MetricsReport> {
    let [t1, t2, t3] = DELTA_THRESHOLDS;
    Ok(MetricsReport {
        delta1: threshold_accuracy(pair, t1, variants.delta)?,
        delta2: threshold_accuracy(pair, t2, variants.delta)?,
        delta3: threshold_accuracy(pair, t3, variants.delta)?,
        rmse: rmse(pair),
        rel: rel(pair)?,
        log10: log10_error(pair, variants.log10)?,
    })
}

/// Per-image reports averaged with equal weight. Errors carry the pair index.
pub fn collection_report(pairs: &[EvalPair<'_>], variants: MetricVariants) -> Result<MetricsReport> {
    let reports = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| full_report(p, variants).map_err(|e| e.at_pair(i)))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports).ok_or_else(|| DepthError::InvalidInput("no pairs to evaluate".into()))
}
