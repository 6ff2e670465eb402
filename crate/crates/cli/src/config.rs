use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthloss::{LossWeights, MetricVariants, OptConfig, SsimParams, DEFAULT_DEPTH_CAP};
use serde::{Deserialize, Serialize};

/// Version stamped into every JSON report as `schema_version`.
pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run depends on, as one JSON document. Missing keys take
/// their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub ssim: SsimParams,
    pub opt: OptConfig,
    pub variants: MetricVariants,
    pub depth_cap: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::optimized(),
            ssim: SsimParams::default(),
            opt: OptConfig::default(),
            variants: MetricVariants::default(),
            depth_cap: DEFAULT_DEPTH_CAP,
            seed: 0,
            out: PathBuf::from("depthloss-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.ssim.validate()?;
        self.opt.validate()?;
        if !(self.depth_cap.is_finite() && self.depth_cap > 0.0) {
            bail!("depth_cap must be positive, got {}", self.depth_cap);
        }
        Ok(())
    }
}

/// Parses `a,b,c` into floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}

pub fn parse_weights(s: &str) -> Result<LossWeights, String> {
    match parse_list(s)?.as_slice() {
        &[a, b, c] => LossWeights::new(a, b, c).map_err(|e| e.to_string()),
        other => Err(format!("expected w_ssim,w_edge,w_mae, got {} values", other.len())),
    }
}
