//! Grid and random search over [`LossWeights`].
//!
//! Every candidate is scored by the same weight-independent number: the mean
//! RMSE, in meters, of the refined maps against their ground truth. Raw
//! weighted losses under different weights cannot be ranked against each
//! other, and minimizing them would simply drive the weights to zero.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::depth::{DepthMap, EvalPair};
use crate::error::{DepthError, Result};
use crate::losses::{check_edge_dims, LossWeights, SsimParams};
use crate::metrics::rmse;
use crate::refiner::{refine, OptConfig};

/// Name of the ranking objective, written into every result.
pub const SEARCH_OBJECTIVE: &str = "mean_post_refine_rmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchMode {
    Grid,
    Random { n_trials: usize, seed: u64 },
}

/// Candidate values for each weight axis plus the enumeration mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub w_ssim: Vec<f64>,
    pub w_edge: Vec<f64>,
    pub w_mae: Vec<f64>,
    pub mode: SearchMode,
}

impl SearchSpace {
    /// The same values on all three axes.
    pub fn uniform(values: &[f64], mode: SearchMode) -> Self {
        Self {
            w_ssim: values.to_vec(),
            w_edge: values.to_vec(),
            w_mae: values.to_vec(),
            mode,
        }
    }

    pub fn grid(values: &[f64]) -> Self {
        Self::uniform(values, SearchMode::Grid)
    }

    pub fn random(values: &[f64], n_trials: usize, seed: u64) -> Self {
        Self::uniform(values, SearchMode::Random { n_trials, seed })
    }

    /// Every admissible weight triple in lexicographic `(w_ssim, w_edge, w_mae)`
    /// order, all-zero excluded. Random mode samples from this same list.
    pub fn lattice(&self) -> Result<Vec<LossWeights>> {
        for (name, axis) in [
            ("w_ssim", &self.w_ssim),
            ("w_edge", &self.w_edge),
            ("w_mae", &self.w_mae),
        ] {
            if axis.is_empty() {
                return Err(DepthError::InvalidSpace(format!("axis {name} has no values")));
            }
            if let Some(v) = axis.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(DepthError::InvalidSpace(format!(
                    "axis {name} holds {v}; values must be >= 0"
                )));
            }
        }
        let sort = |axis: &[f64]| {
            let mut a = axis.to_vec();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        };
        let (s, e, m) = (sort(&self.w_ssim), sort(&self.w_edge), sort(&self.w_mae));
        let mut out = Vec::with_capacity(s.len() * e.len() * m.len());
        for &w_ssim in &s {
            for &w_edge in &e {
                for &w_mae in &m {
                    if w_ssim > 0.0 || w_edge > 0.0 || w_mae > 0.0 {
                        out.push(LossWeights { w_ssim, w_edge, w_mae });
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(DepthError::InvalidSpace("every combination is all-zero".into()));
        }
        Ok(out)
    }

    /// Candidates in evaluation order for either mode.
    pub fn candidates(&self) -> Result<Vec<LossWeights>> {
        match self.mode {
            SearchMode::Grid => enumerate_grid(self),
            SearchMode::Random { .. } => sample_random(self),
        }
    }
}

pub fn enumerate_grid(space: &SearchSpace) -> Result<Vec<LossWeights>> {
    if space.mode != SearchMode::Grid {
        return Err(DepthError::InvalidSpace("enumerate_grid needs grid mode".into()));
    }
    space.lattice()
}

/// `n_trials` distinct lattice points drawn without replacement.
pub fn sample_random(space: &SearchSpace) -> Result<Vec<LossWeights>> {
    let SearchMode::Random { n_trials, seed } = space.mode else {
        return Err(DepthError::InvalidSpace("sample_random needs random mode".into()));
    };
    let lattice = space.lattice()?;
    if n_trials == 0 || n_trials > lattice.len() {
        return Err(DepthError::InvalidSpace(format!(
            "n_trials must lie in 1..={}, got {n_trials}",
            lattice.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, lattice.len(), n_trials)
        .into_iter()
        .map(|i| lattice[i])
        .collect())
}

/// Outcome for one weight triple. A failed candidate ranks last with an
/// infinite objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub weights: LossWeights,
    #[serde(serialize_with = "finite_or_null")]
    pub objective: f64,
    /// Post-refinement RMSE per pair, in input order.
    pub per_pair: Vec<f64>,
    pub failure: Option<String>,
}

impl CandidateScore {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn check_pairs(pairs: &[(DepthMap, DepthMap)], params: &SsimParams, cfg: &OptConfig) -> Result<()> {
    if pairs.is_empty() {
        return Err(DepthError::InvalidInput("search needs at least one pair".into()));
    }
    cfg.validate()?;
    for (i, (pred, gt)) in pairs.iter().enumerate() {
        let pair = EvalPair::new(pred, gt).map_err(|e| e.at_pair(i))?;
        check_edge_dims(pair.width(), pair.height()).map_err(|e| e.at_pair(i))?;
        params
            .validate_for(pair.width(), pair.height())
            .map_err(|e| e.at_pair(i))?;
    }
    Ok(())
}

/// Mean post-refinement RMSE over `(degraded, ground truth)` pairs.
///
/// Invalid inputs are errors; a refinement that diverges marks the candidate
/// failed instead.
pub fn evaluate_candidate(
    weights: &LossWeights,
    pairs: &[(DepthMap, DepthMap)],
    params: &SsimParams,
    cfg: &OptConfig,
) -> Result<CandidateScore> {
    weights.validate()?;
    check_pairs(pairs, params, cfg)?;
    Ok(score(weights, pairs, params, cfg))
}

fn score(
    weights: &LossWeights,
    pairs: &[(DepthMap, DepthMap)],
    params: &SsimParams,
    cfg: &OptConfig,
) -> CandidateScore {
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (i, (pred, gt)) in pairs.iter().enumerate() {
        match refine(pred, gt, weights, params, cfg) {
            Ok(trace) => per_pair.push(rmse(&EvalPair::new(&trace.final_map, gt).expect("checked shapes"))),
            Err(e) => {
                return CandidateScore {
                    weights: *weights,
                    objective: f64::INFINITY,
                    per_pair,
                    failure: Some(e.at_pair(i).to_string()),
                }
            }
        }
    }
    let objective = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    CandidateScore {
        weights: *weights,
        objective,
        per_pair,
        failure: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub objective: &'static str,
    pub mode: SearchMode,
    pub space: SearchSpace,
    /// SHA-256 over the pair shapes, caps and pixel bits.
    pub pairs_digest: String,
    pub n_pairs: usize,
    pub opt: OptConfig,
    pub ssim: SsimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    /// Ascending by objective; ties by `(w_ssim, w_edge, w_mae)`.
    pub ranking: Vec<CandidateScore>,
    pub winner: LossWeights,
    pub provenance: Provenance,
}

impl SearchResult {
    pub fn winner_score(&self) -> &CandidateScore {
        &self.ranking[0]
    }

    /// Columns `rank,w_ssim,w_edge,w_mae,objective,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,w_ssim,w_edge,w_mae,objective,status\n");
        for (i, c) in self.ranking.iter().enumerate() {
            let w = &c.weights;
            let status = if c.failed() { "failed" } else { "ok" };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{status}",
                i + 1,
                w.w_ssim,
                w.w_edge,
                w.w_mae,
                c.objective
            );
        }
        out
    }
}

pub fn pairs_digest(pairs: &[(DepthMap, DepthMap)]) -> String {
    let mut h = Sha256::new();
    for (pred, gt) in pairs {
        for map in [pred, gt] {
            h.update((map.width() as u64).to_le_bytes());
            h.update((map.height() as u64).to_le_bytes());
            h.update(map.depth_cap().to_le_bytes());
            for v in map.pixels() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn lexicographic(a: &LossWeights, b: &LossWeights) -> Ordering {
    let (x, y) = (a.as_tuple(), b.as_tuple());
    x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2))
}

pub fn run_search(
    space: &SearchSpace,
    pairs: &[(DepthMap, DepthMap)],
    params: &SsimParams,
    cfg: &OptConfig,
) -> Result<SearchResult> {
    let candidates = space.candidates()?;
    check_pairs(pairs, params, cfg)?;

    let mut ranking: Vec<CandidateScore> = candidates.par_iter().map(|w| score(w, pairs, params, cfg)).collect();
    if ranking.iter().all(CandidateScore::failed) {
        let first = ranking[0].failure.clone().unwrap_or_default();
        return Err(DepthError::SearchFailed(format!(
            "all {} candidates failed; first: {first}",
            ranking.len()
        )));
    }
    ranking.sort_by(|a, b| {
        a.objective
            .total_cmp(&b.objective)
            .then_with(|| lexicographic(&a.weights, &b.weights))
    });

    Ok(SearchResult {
        winner: ranking[0].weights,
        ranking,
        provenance: Provenance {
            objective: SEARCH_OBJECTIVE,
            mode: space.mode,
            space: space.clone(),
            pairs_digest: pairs_digest(pairs),
            n_pairs: pairs.len(),
            opt: *cfg,
            ssim: *params,
        },
    })
}
