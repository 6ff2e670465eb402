use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DepthError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid depth {value} at (row {row}, col {col}): must be finite and non-negative")]
    InvalidPixel { row: usize, col: usize, value: f64 },

    #[error("depth {value} at pixel {index} exceeds the cap of {cap} m")]
    AboveCap { index: usize, value: f64, cap: f64 },

    #[error("{axis} dimension {size} is odd and cannot be halved")]
    OddDimension { axis: &'static str, size: usize },

    #[error("dimension mismatch: prediction is {pred_w}x{pred_h} (cap {pred_cap}), ground truth is {gt_w}x{gt_h} (cap {gt_cap})")]
    DimensionMismatch {
        pred_w: usize,
        pred_h: usize,
        pred_cap: f64,
        gt_w: usize,
        gt_h: usize,
        gt_cap: f64,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{operand} depth {value} at pixel {index} must be strictly positive")]
    NonPositive {
        operand: &'static str,
        index: usize,
        value: f64,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("refinement diverged at iteration {iteration}: combined loss is not finite")]
    Diverged { iteration: usize },

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<DepthError>,
    },
}

impl DepthError {
    pub(crate) fn at_pair(self, index: usize) -> Self {
        DepthError::Pair {
            index,
            source: Box::new(self),
        }
    }
}
