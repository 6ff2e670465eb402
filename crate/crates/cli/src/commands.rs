use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use depthloss::{
    analytic_gradient, combined_loss, degrade, finite_diff_check_against, full_report, generate_scene, refine,
    run_search, store_depth, DegradeSpec, DepthFormat, DepthMap, EvalPair, GradCheckReport, LossBreakdown, LossKind,
    LossWeights, MetricVariants, MetricsReport, OptConfig, SceneKind, SceneSpec, SearchResult, SearchSpace, SsimParams,
    StopReason,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::manifest::{self, load_map, Manifest, ManifestRow};

/// Largest relative error `grad-check` accepts.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Whether a command finished without pair- or check-level failures.
pub type Clean = bool;

#[derive(Serialize)]
struct PairEntry<T> {
    index: usize,
    tag: String,
    pred: PathBuf,
    gt: PathBuf,
    result: Option<T>,
    error: Option<String>,
}

fn write_json(path: &Path, doc: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

/// Runs `f` on every loadable pair; failures are logged with their row index.
fn per_pair<T: Send>(
    m: &Manifest,
    depth_cap: f64,
    f: impl Fn(&DepthMap, &DepthMap) -> Result<T> + Sync,
) -> Vec<PairEntry<T>> {
    let loaded = m.load_pairs(depth_cap);
    let entries: Vec<PairEntry<T>> = loaded
        .into_par_iter()
        .zip(&m.rows)
        .enumerate()
        .map(|(index, (pair, row))| {
            let outcome = pair.and_then(|(p, g)| f(&p, &g));
            let (result, error) = match outcome {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(format!("{e:#}"))),
            };
            PairEntry {
                index,
                tag: row.tag.clone(),
                pred: row.pred.clone(),
                gt: row.gt.clone(),
                result,
                error,
            }
        })
        .collect();
    for e in &entries {
        if let Some(err) = &e.error {
            eprintln!("[pair {}] error: {err}", e.index);
        }
    }
    entries
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    schema_version: u32,
    command: &'static str,
    manifest: &'a Path,
    variants: MetricVariants,
    depth_cap: f64,
    pairs: Vec<PairEntry<MetricsReport>>,
    aggregate: Option<MetricsReport>,
    failed: usize,
}

pub fn metrics(cfg: &RunConfig, manifest_path: &Path) -> Result<Clean> {
    let m = Manifest::read(manifest_path)?;
    let variants = cfg.variants;
    let pairs = per_pair(&m, cfg.depth_cap, |p, g| {
        Ok(full_report(&EvalPair::new(p, g)?, variants)?)
    });
    let ok: Vec<MetricsReport> = pairs.iter().filter_map(|e| e.result).collect();
    let aggregate = MetricsReport::mean(&ok);
    let failed = pairs.len() - ok.len();

    let mut csv = format!("pair,tag,{}\n", MetricsReport::COLUMNS.join(","));
    for e in &pairs {
        if let Some(r) = &e.result {
            csv.push_str(&format!("{},{},{}\n", e.index, e.tag, join(&r.values())));
        }
    }
    if let Some(a) = &aggregate {
        csv.push_str(&format!("mean,,{}\n", join(&a.values())));
    }

    let dir = out_dir(cfg)?;
    write_text(&dir.join("metrics.csv"), &csv)?;
    write_json(
        &dir.join("metrics.json"),
        &MetricsDoc {
            schema_version: SCHEMA_VERSION,
            command: "metrics",
            manifest: manifest_path,
            variants,
            depth_cap: cfg.depth_cap,
            pairs,
            aggregate,
            failed,
        },
    )?;

    println!("variants: log10={} delta={}", variants.log10, variants.delta);
    println!("{}", MetricsReport::COLUMNS.join("\t"));
    match &aggregate {
        Some(a) => println!("{}", a.values().map(|v| format!("{v:.4}")).join("\t")),
        None => println!("(no pair evaluated)"),
    }
    if failed > 0 {
        eprintln!("{failed} of {} pairs failed", m.rows.len());
    }
    Ok(failed == 0)
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Serialize)]
struct LossDoc<'a> {
    schema_version: u32,
    command: &'static str,
    manifest: &'a Path,
    weights: LossWeights,
    ssim: SsimParams,
    pairs: Vec<PairEntry<LossBreakdown>>,
    failed: usize,
}

pub fn loss(cfg: &RunConfig, manifest_path: &Path) -> Result<Clean> {
    let m = Manifest::read(manifest_path)?;
    let (weights, params) = (cfg.weights, cfg.ssim);
    let pairs = per_pair(&m, cfg.depth_cap, |p, g| {
        Ok(combined_loss(&EvalPair::new(p, g)?, &weights, &params)?)
    });
    let failed = pairs.iter().filter(|e| e.error.is_some()).count();

    let mut csv = format!("# {weights}\npair,tag,mae,edge,ssim_loss,combined\n");
    for e in &pairs {
        if let Some(b) = &e.result {
            csv.push_str(&format!(
                "{},{},{}\n",
                e.index,
                e.tag,
                join(&[b.mae, b.edge, b.ssim_loss, b.combined])
            ));
        }
    }
    let dir = out_dir(cfg)?;
    write_text(&dir.join("loss.csv"), &csv)?;
    println!("{weights}");
    for e in &pairs {
        if let Some(b) = &e.result {
            println!(
                "pair {}: mae={:.6} edge={:.6} ssim_loss={:.6} combined={:.6}",
                e.index, b.mae, b.edge, b.ssim_loss, b.combined
            );
        }
    }
    write_json(
        &dir.join("loss.json"),
        &LossDoc {
            schema_version: SCHEMA_VERSION,
            command: "loss",
            manifest: manifest_path,
            weights,
            ssim: params,
            pairs,
            failed,
        },
    )?;
    Ok(failed == 0)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckArgs {
    pub size: usize,
    pub pairs: usize,
    pub epsilon: f64,
    /// Test hook: perturb this loss's analytic gradient before checking.
    pub corrupt: Option<LossKind>,
}

#[derive(Serialize)]
struct GradCheckEntry {
    #[serde(flatten)]
    report: GradCheckReport,
    passed: bool,
}

#[derive(Serialize)]
struct GradCheckDoc {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    size: usize,
    pairs: usize,
    epsilon: f64,
    tolerance: f64,
    weights: LossWeights,
    ssim: SsimParams,
    results: Vec<GradCheckEntry>,
    passed: bool,
}

fn random_pairs(seed: u64, n: usize, size: usize, cap: f64) -> Result<Vec<(DepthMap, DepthMap)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (0.01 * cap, 0.99 * cap);
    let map = |rng: &mut ChaCha8Rng| DepthMap::from_fn(size, size, cap, |_, _| rng.random_range(lo..hi));
    (0..n).map(|_| Ok((map(&mut rng)?, map(&mut rng)?))).collect()
}

pub fn grad_check(cfg: &RunConfig, args: GradCheckArgs) -> Result<Clean> {
    if args.pairs == 0 {
        bail!("--pairs must be at least 1");
    }
    cfg.ssim.validate_for(args.size, args.size)?;
    let pairs = random_pairs(cfg.seed, args.pairs, args.size, cfg.depth_cap)?;
    let mut results = Vec::new();
    for kind in LossKind::ALL {
        let mut worst: Option<GradCheckReport> = None;
        let (mut checked, mut skipped) = (0, 0);
        for (pred, gt) in &pairs {
            let pair = EvalPair::new(pred, gt)?;
            let mut analytic = analytic_gradient(kind, &pair, &cfg.ssim, &cfg.weights)?;
            if args.corrupt == Some(kind) {
                let v = &mut analytic.values_mut()[0];
                *v += 1e-3 * (1.0 + v.abs());
            }
            let r = finite_diff_check_against(kind, &pair, args.epsilon, &cfg.ssim, &cfg.weights, &analytic)?;
            checked += r.checked;
            skipped += r.skipped;
            if worst.is_none_or(|w| r.max_relative_error > w.max_relative_error) {
                worst = Some(r);
            }
        }
        let mut report = worst.expect("at least one pair");
        report.checked = checked;
        report.skipped = skipped;
        let passed = report.max_relative_error <= GRAD_CHECK_TOLERANCE;
        println!(
            "{:<9} max_relative_error={:.3e} checked={} skipped={} {}",
            kind.name(),
            report.max_relative_error,
            checked,
            skipped,
            if passed { "PASS" } else { "FAIL" }
        );
        results.push(GradCheckEntry { report, passed });
    }
    let passed = results.iter().all(|r| r.passed);
    for r in results.iter().filter(|r| !r.passed) {
        eprintln!(
            "gradient check failed for {}: {:.3e} > {GRAD_CHECK_TOLERANCE:e}",
            r.report.loss, r.report.max_relative_error
        );
    }
    write_json(
        &out_dir(cfg)?.join("grad_check.json"),
        &GradCheckDoc {
            schema_version: SCHEMA_VERSION,
            command: "grad-check",
            seed: cfg.seed,
            size: args.size,
            pairs: args.pairs,
            epsilon: args.epsilon,
            tolerance: GRAD_CHECK_TOLERANCE,
            weights: cfg.weights,
            ssim: cfg.ssim,
            results,
            passed,
        },
    )?;
    Ok(passed)
}

#[derive(Serialize)]
struct SearchDoc<'a> {
    schema_version: u32,
    command: &'static str,
    manifest: &'a Path,
    #[serde(flatten)]
    result: &'a SearchResult,
}

pub fn search(cfg: &RunConfig, manifest_path: &Path, space: &SearchSpace) -> Result<Clean> {
    let m = Manifest::read(manifest_path)?;
    let pairs = m
        .load_pairs(cfg.depth_cap)
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.with_context(|| format!("pair {i}")))
        .collect::<Result<Vec<_>>>()?;
    let result = run_search(space, &pairs, &cfg.ssim, &cfg.opt)?;

    let dir = out_dir(cfg)?;
    write_text(&dir.join("search.csv"), &result.to_csv())?;
    write_json(
        &dir.join("search.json"),
        &SearchDoc {
            schema_version: SCHEMA_VERSION,
            command: "search",
            manifest: manifest_path,
            result: &result,
        },
    )?;

    let failed: Vec<_> = result.ranking.iter().filter(|c| c.failed()).collect();
    for c in &failed {
        eprintln!("candidate {} failed: {}", c.weights, c.failure.as_deref().unwrap_or(""));
    }
    println!(
        "{} candidates; winner {} with mean post-refinement RMSE {:.6} m",
        result.ranking.len(),
        result.winner,
        result.winner_score().objective
    );
    Ok(failed.is_empty())
}

#[derive(Serialize)]
struct RefineDoc<'a> {
    schema_version: u32,
    command: &'static str,
    pred: &'a Path,
    gt: &'a Path,
    weights: LossWeights,
    ssim: SsimParams,
    opt: OptConfig,
    iterations: usize,
    best_iteration: usize,
    stop_reason: StopReason,
    initial: LossBreakdown,
    best: LossBreakdown,
}

pub fn refine_files(cfg: &RunConfig, pred_path: &Path, gt_path: &Path) -> Result<Clean> {
    let pred = load_map(pred_path, cfg.depth_cap)?;
    let gt = load_map(gt_path, cfg.depth_cap)?;
    let trace = refine(&pred, &gt, &cfg.weights, &cfg.ssim, &cfg.opt)?;

    let dir = out_dir(cfg)?;
    store_depth(&trace.final_map, &dir.join("refined.pfm"), DepthFormat::Pfm)?;
    write_text(&dir.join("trace.csv"), &trace.to_csv())?;
    write_json(
        &dir.join("refine.json"),
        &RefineDoc {
            schema_version: SCHEMA_VERSION,
            command: "refine",
            pred: pred_path,
            gt: gt_path,
            weights: cfg.weights,
            ssim: cfg.ssim,
            opt: cfg.opt,
            iterations: trace.records.len(),
            best_iteration: trace.best_iteration,
            stop_reason: trace.stop_reason,
            initial: *trace.initial(),
            best: *trace.best(),
        },
    )?;
    println!("initial combined loss {}", trace.initial().combined);
    println!(
        "final combined loss {} (iteration {} of {})",
        trace.best().combined,
        trace.best_iteration,
        trace.records.len()
    );
    println!("stop reason: {}", trace.stop_reason);
    Ok(true)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub scenes: Vec<SceneKind>,
    pub size: usize,
    pub near: f64,
    pub far: f64,
    pub degrade: DegradeSpec,
}

/// Scene `i` (1-based) uses seed `base + i` for generation and degradation.
pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<Clean> {
    if args.scenes.is_empty() {
        bail!("no scenes requested");
    }
    let dir = out_dir(cfg)?;
    let mut rows = Vec::new();
    for (kind, i) in args.scenes.iter().zip(1u64..) {
        let seed = cfg.seed.checked_add(i).ok_or_else(|| anyhow!("seed overflow"))?;
        let spec = SceneSpec::new(*kind, args.size, args.size, args.near, args.far, seed);
        let gt = generate_scene(&spec)?;
        let degraded = degrade(&gt, &DegradeSpec { seed, ..args.degrade })?;
        let gt_name = format!("gt_{i:02}_{kind}.pfm");
        let pred_name = format!("pred_{i:02}_{kind}.pfm");
        store_depth(&gt, &dir.join(&gt_name), DepthFormat::Pfm)?;
        store_depth(&degraded, &dir.join(&pred_name), DepthFormat::Pfm)?;
        rows.push(ManifestRow {
            pred: pred_name.into(),
            gt: gt_name.into(),
            tag: kind.to_string(),
        });
    }
    let path = dir.join("manifest.csv");
    manifest::write(&path, &rows)?;
    println!("wrote {} pairs and {}", rows.len(), path.display());
    Ok(true)
}
