//! `depthloss` command-line tool.
//!
//! Exit status: 0 when everything succeeded, 1 when the run completed but a
//! pair, candidate or gradient check failed, 2 when the run could not
//! complete (bad arguments, config or input files).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{ArgGroup, Parser, Subcommand};
use depthloss::{DegradeSpec, DeltaVariant, Log10Variant, LossKind, LossWeights, SceneKind, SearchSpace};

use crate::commands::{GradCheckArgs, SynthArgs};
use crate::config::{parse_weights, RunConfig};

#[derive(Parser)]
#[command(name = "depthloss", version)]
#[command(about = "Depth-map losses, evaluation metrics, refinement and loss-weight search")]
struct Cli {
    /// RunConfig JSON; individual flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["standard", "paper"])
        .map(|s| s.parse::<Log10Variant>().expect("listed value")))]
    variant_log10: Option<Log10Variant>,

    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["ratio", "paper"])
        .map(|s| s.parse::<DeltaVariant>().expect("listed value")))]
    variant_delta: Option<DeltaVariant>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate manifest pairs: delta1, delta2, delta3, rmse, rel, log10.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
    },

    /// Per-pair loss breakdown under the configured weights.
    Loss {
        #[arg(long)]
        manifest: PathBuf,

        /// Override weights as w_ssim,w_edge,w_mae.
        #[arg(long, value_parser = parse_weights)]
        weights: Option<LossWeights>,
    },

    /// Compare analytic gradients with finite differences on seeded random maps.
    GradCheck {
        #[arg(long, default_value_t = 16)]
        size: usize,

        #[arg(long, default_value_t = 3)]
        pairs: usize,

        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,

        #[arg(long, hide = true)]
        corrupt_gradient: Option<LossKind>,
    },

    /// Grid or random search over loss weights, scored by post-refinement RMSE.
    #[command(group(ArgGroup::new("mode").required(true).args(["grid", "random"])))]
    Search {
        /// Manifest of (degraded prediction, ground truth) pairs.
        #[arg(long)]
        manifest: PathBuf,

        /// Grid values used on every weight axis.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        grid: Option<Vec<f64>>,

        #[arg(long, requires = "values")]
        random: bool,

        /// Lattice values for random mode.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,

        #[arg(long, default_value_t = 30)]
        trials: usize,
    },

    /// Refine a prediction against its ground truth; writes refined.pfm and trace.csv.
    Refine {
        pred: PathBuf,
        gt: PathBuf,

        #[arg(long, value_parser = parse_weights)]
        weights: Option<LossWeights>,

        #[arg(long)]
        max_iters: Option<usize>,

        #[arg(long)]
        learning_rate: Option<f64>,
    },

    /// Write synthetic ground-truth/degraded pfm pairs and a manifest.
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "ramp,step_wall,sphere,box_room,mixed")]
        scenes: Vec<SceneKind>,

        #[arg(long, default_value_t = 64)]
        size: usize,

        #[arg(long, default_value_t = 1.0)]
        near: f64,

        #[arg(long, default_value_t = 8.0)]
        far: f64,

        #[arg(long, default_value_t = 0.3)]
        offset: f64,

        #[arg(long, default_value_t = 1)]
        blur_radius: usize,

        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,

        #[arg(long, default_value_t = 0.02)]
        dropout: f64,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(v) = cli.variant_log10 {
        cfg.variants.log10 = v;
    }
    if let Some(v) = cli.variant_delta {
        cfg.variants.delta = v;
    }
    match &cli.command {
        Command::Loss { weights: Some(w), .. } => cfg.weights = *w,
        Command::Refine {
            weights,
            max_iters,
            learning_rate,
            ..
        } => {
            if let Some(w) = weights {
                cfg.weights = *w;
            }
            if let Some(n) = max_iters {
                cfg.opt.max_iters = *n;
            }
            if let Some(lr) = learning_rate {
                cfg.opt.learning_rate = *lr;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = build_config(&cli)?;
    match cli.command {
        Command::Metrics { manifest } => commands::metrics(&cfg, &manifest),
        Command::Loss { manifest, .. } => commands::loss(&cfg, &manifest),
        Command::GradCheck {
            size,
            pairs,
            epsilon,
            corrupt_gradient,
        } => commands::grad_check(
            &cfg,
            GradCheckArgs {
                size,
                pairs,
                epsilon,
                corrupt: corrupt_gradient,
            },
        ),
        Command::Search {
            manifest,
            grid,
            values,
            trials,
            ..
        } => {
            let space = match (grid, values) {
                (Some(g), _) => SearchSpace::grid(&g),
                (None, Some(v)) => SearchSpace::random(&v, trials, cfg.seed),
                (None, None) => unreachable!("clap requires --grid or --random --values"),
            };
            commands::search(&cfg, &manifest, &space)
        }
        Command::Refine { pred, gt, .. } => commands::refine_files(&cfg, &pred, &gt),
        Command::Synth {
            scenes,
            size,
            near,
            far,
            offset,
            blur_radius,
            noise_sigma,
            dropout,
        } => commands::synth(
            &cfg,
            &SynthArgs {
                scenes,
                size,
                near,
                far,
                degrade: DegradeSpec {
                    gaussian_noise_sigma: noise_sigma,
                    blur_radius,
                    offset,
                    dropout_fraction: dropout,
                    seed: 0,
                },
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
