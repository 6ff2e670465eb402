#![doc = include_str!("../../../book/src/introduction.md")]

pub mod depth;
pub mod error;
pub mod gradcheck;
pub mod gradients;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod refiner;
mod scalar;
pub mod search;
pub mod synthetic;
pub mod window;

pub use depth::{clamp_to_cap, DepthMap, EvalPair, DEFAULT_DEPTH_CAP};
pub use error::{DepthError, Result};
pub use gradcheck::{analytic_gradient, finite_diff_check, finite_diff_check_against, GradCheckReport, LossKind};
pub use gradients::{combined_grad, edge_grad, mae_grad, ssim_grad, GradientField};
pub use io::{load_depth, store_depth, DepthFormat};
pub use losses::{combined_loss, edge_loss, mae_loss, ssim_index, ssim_loss, LossBreakdown, LossWeights, SsimParams};
pub use metrics::{
    collection_report, full_report, log10_error, rel, rmse, threshold_accuracy, DeltaVariant, Log10Variant,
    MetricVariants, MetricsReport, DELTA_THRESHOLDS,
};
pub use refiner::{
    refine, IterationRecord, OptConfig, RefineTrace, StopReason, NETWORK_LEARNING_RATE, PIXEL_LEARNING_RATE,
};
pub use search::{
    enumerate_grid, evaluate_candidate, pairs_digest, run_search, sample_random, CandidateScore, Provenance,
    SearchMode, SearchResult, SearchSpace, SEARCH_OBJECTIVE,
};
pub use synthetic::{degrade, generate_scene, standard_suite, DegradeSpec, SceneKind, SceneSpec};
pub use window::WindowKind;
