//! Command-line surface: train / visualize / attack / inspect /
//! compare-domains. Every subcommand accepts `--config <file>` for defaults
//! and `--seed` for determinism; flags override config values.

use crate::adversarial::{attack, AdvConfig};
use crate::am::{feature_vis, pixel_am, AmConfig, Parameterization};
use crate::config::RunConfig;
use crate::data::synth_dataset;
use crate::error::{AmvisError, Result};
use crate::fourier::high_freq_energy_ratio;
use crate::io::{encode_png, write_csv};
use crate::models::{
    build_small_cnn, build_tiny_vit, load_model, save_weights, train, TrainConfig,
};
use crate::objectives::UnitRef;
use crate::tensor::Tensor;
use crate::transforms::TransformPolicy;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "amvis", version, about = "Feature visualization and adversarial analysis for small self-trained models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Load defaults from a key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed applied to all stochastic parts of the run
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the synthetic shapes dataset and save weights
    Train {
        #[command(flatten)]
        common: Common,
        /// Architecture: cnn or vit
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        classes: Option<usize>,
        /// Training images per class
        #[arg(long)]
        train_per_class: Option<usize>,
        /// Held-out images per class
        #[arg(long)]
        test_per_class: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Where to write the weights file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize images that maximize chosen units of a saved model
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Unit reference "tap:kind:index"; repeatable
        #[arg(long)]
        unit: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        /// Parameterization: fourier or pixel
        #[arg(long)]
        mode: Option<String>,
        /// Spectral scale decay exponent (fourier mode)
        #[arg(long)]
        decay: Option<f64>,
        /// Disable jitter/scale/rotation augmentation
        #[arg(long)]
        no_transforms: bool,
        /// Record a trace snapshot every N steps
        #[arg(long)]
        trace_every: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run targeted TV-regularized attacks against a saved model
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Named budget: resnet-preset (eps 0.01) or vit-preset (eps 0.05)
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Fixed target class; default picks each image's runner-up class
        #[arg(long)]
        target: Option<usize>,
        /// Number of correctly-classified test images to attack
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print architecture, parameter counts, and tap shapes of a weights file
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare pixel- vs fourier-domain optimization by high-frequency energy
    CompareDomains {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Unit reference "tap:kind:index"; repeatable
        #[arg(long)]
        unit: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Number of seeds per unit
        #[arg(long)]
        seeds: Option<usize>,
        /// High-frequency cutoff as a fraction of Nyquist
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit codes: 0 success, 1 runtime failure, 2 usage (clap), 3 config, 4
/// invalid unit reference.
pub fn exit_code_for(err: &AmvisError) -> i32 {
    match err {
        AmvisError::Config { .. } => 3,
        AmvisError::InvalidUnitRef(_)
        | AmvisError::UnknownTap(_)
        | AmvisError::UnitIndexOutOfRange { .. }
        | AmvisError::UnitKindMismatch { .. } => 4,
        _ => 1,
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version on stdout with code 0, usage errors on
            // stderr with code 2
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code_for(&e)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            // an unreadable config file is a config error (exit 3), not a
            // generic i/o failure
            AmvisError::Io { path, source } => AmvisError::Config {
                path,
                detail: source.to_string(),
            },
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn pick<T: Clone + std::str::FromStr>(
    flag: &Option<T>,
    cfg: &RunConfig,
    section: &str,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v.clone());
    }
    Ok(cfg.get::<T>(section, key)?.unwrap_or(default))
}

fn require_path(
    flag: &Option<PathBuf>,
    cfg: &RunConfig,
    section: &str,
    key: &str,
) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    cfg.raw(section, key)
        .map(PathBuf::from)
        .ok_or_else(|| AmvisError::Config {
            path: String::from("<cli>"),
            detail: format!("missing required --{} (or [{}] {} in a config)", key, section, key),
        })
}

fn parse_units(flags: &[String], cfg: &RunConfig, section: &str) -> Result<Vec<UnitRef>> {
    let mut raw: Vec<String> = flags.to_vec();
    if raw.is_empty() {
        if let Some(v) = cfg.raw(section, "units") {
            raw = v.split(',').map(|s| s.trim().to_string()).collect();
        }
    }
    if raw.is_empty() {
        return Err(AmvisError::Config {
            path: String::from("<cli>"),
            detail: format!("no units given: pass --unit tap:kind:index (or [{}] units=...)", section),
        });
    }
    raw.iter().map(|s| s.parse()).collect()
}

/// Default attack target: the class with the second-highest clean logit,
/// i.e. the nearest competing class.
pub fn runner_up_class(model: &crate::models::ModelGraph, img: &Tensor) -> Result<usize> {
    let (c, h, w) = model.input;
    let batch = Tensor::from_vec(vec![1, c, h, w], img.data.clone())?;
    let logits = model.activations_at(&batch, "logits")?;
    let mut idx: Vec<usize> = (0..model.classes).collect();
    idx.sort_by(|&a, &b| logits.data[b].partial_cmp(&logits.data[a]).unwrap());
    Ok(idx[1])
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AmvisError::io(dir.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            model,
            classes,
            train_per_class,
            test_per_class,
            epochs,
            lr,
            batch_size,
            out,
        } => {
            let cfg = load_config(&common)?;
            let s = "train";
            let arch = pick(&model, &cfg, s, "model", "cnn".to_string())?;
            let classes = pick(&classes, &cfg, s, "classes", 6)?;
            let n_train = pick(&train_per_class, &cfg, s, "train_per_class", 200)?;
            let n_test = pick(&test_per_class, &cfg, s, "test_per_class", 40)?;
            let seed = pick(&common.seed, &cfg, s, "seed", 0)?;
            let batch = pick(&batch_size, &cfg, s, "batch_size", 32)?;
            let out = require_path(&out, &cfg, s, "out")?;
            let (mut m, default_epochs, default_lr) = match arch.as_str() {
                "cnn" => (build_small_cnn((3, 32, 32), classes, seed)?, 12, 0.01),
                "vit" => (
                    build_tiny_vit((3, 32, 32), 8, 64, 4, 4, classes, seed)?,
                    40,
                    0.05,
                ),
                other => {
                    return Err(AmvisError::Config {
                        path: String::from("<cli>"),
                        detail: format!("unknown model '{}' (expected cnn or vit)", other),
                    })
                }
            };
            let epochs = pick(&epochs, &cfg, s, "epochs", default_epochs)?;
            let lr = pick(&lr, &cfg, s, "lr", default_lr)?;
            let train_set = synth_dataset(classes, n_train, 32, 32, seed)?;
            let test_set = synth_dataset(classes, n_test, 32, 32, seed.wrapping_add(1))?;
            let mut tc = TrainConfig::new(epochs, lr, seed);
            tc.batch_size = batch;
            let report = train(&mut m, &train_set, &test_set, &tc)?;
            save_weights(&m, &out)?;
            println!(
                "trained {} for {} epochs: train acc {:.4}, test acc {:.4}, final loss {:.4}",
                arch,
                report.epochs,
                report.train_accuracy,
                report.test_accuracy,
                report.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            println!("weights written to {}", out.display());
            Ok(())
        }
        Command::Visualize {
            common,
            weights,
            unit,
            steps,
            eta,
            mode,
            decay,
            no_transforms,
            trace_every,
            out,
        } => {
            let cfg = load_config(&common)?;
            let s = "visualize";
            let weights = require_path(&weights, &cfg, s, "weights")?;
            let out = require_path(&out, &cfg, s, "out")?;
            let units = parse_units(&unit, &cfg, s)?;
            let seed = pick(&common.seed, &cfg, s, "seed", 0)?;
            let steps = pick(&steps, &cfg, s, "steps", 500)?;
            let mode = pick(&mode, &cfg, s, "mode", "fourier".to_string())?;
            let trace_every = pick(&trace_every, &cfg, s, "trace_every", 0)?;
            let model = load_model(&weights)?;
            let before = model.weights_checksum();
            ensure_dir(&out)?;
            for u in &units {
                let mut am = match mode.as_str() {
                    "fourier" => AmConfig::fourier(steps, seed),
                    "pixel" => AmConfig::pixel(steps, seed),
                    other => {
                        return Err(AmvisError::Config {
                            path: String::from("<cli>"),
                            detail: format!("unknown mode '{}' (expected fourier or pixel)", other),
                        })
                    }
                };
                if let Some(e) = eta {
                    am.eta = e;
                } else if let Some(e) = cfg.get::<f64>(s, "eta")? {
                    am.eta = e;
                }
                am.decay = pick(&decay, &cfg, s, "decay", 1.0)?;
                am.trace_every = trace_every;
                if no_transforms || cfg.get::<bool>(s, "no_transforms")?.unwrap_or(false) {
                    am.transforms = TransformPolicy::disabled(seed);
                }
                let (x, trace) = match am.parameterization {
                    Parameterization::Fourier => feature_vis(&model, u, &am)?,
                    Parameterization::Pixel => pixel_am(&model, u, &am)?,
                };
                let tag = u.to_string().replace(':', "_");
                let unit_dir = out.join(&tag);
                trace.export(&unit_dir)?;
                encode_png(&x, &unit_dir.join("final.png"))?;
                println!(
                    "{}: objective {:.6} -> {:.6} ({} steps, {})",
                    u,
                    trace.initial_objective(),
                    trace.final_objective(),
                    steps,
                    mode
                );
            }
            if model.weights_checksum() != before {
                return Err(AmvisError::ModelConfig(
                    "weights changed during visualization".into(),
                ));
            }
            Ok(())
        }
        Command::Attack {
            common,
            weights,
            preset,
            epsilon,
            alpha,
            lambda,
            steps,
            target,
            images,
            out,
        } => {
            let cfg = load_config(&common)?;
            let s = "attack";
            let weights = require_path(&weights, &cfg, s, "weights")?;
            let out = require_path(&out, &cfg, s, "out")?;
            let seed = pick(&common.seed, &cfg, s, "seed", 0)?;
            let n_images = pick(&images, &cfg, s, "images", 50)?;
            let model = load_model(&weights)?;
            let before = model.weights_checksum();
            let preset = pick(&preset, &cfg, s, "preset", "vit-preset".to_string())?;
            let mut adv = match preset.as_str() {
                "resnet-preset" => AdvConfig::resnet_preset(0),
                "vit-preset" => AdvConfig::vit_preset(0),
                other => {
                    return Err(AmvisError::Config {
                        path: String::from("<cli>"),
                        detail: format!(
                            "unknown preset '{}' (expected resnet-preset or vit-preset)",
                            other
                        ),
                    })
                }
            };
            if let Some(v) = epsilon.or(cfg.get(s, "epsilon")?) {
                adv.epsilon = v;
            }
            if let Some(v) = alpha.or(cfg.get(s, "alpha")?) {
                adv.alpha = v;
            }
            if let Some(v) = lambda.or(cfg.get(s, "lambda")?) {
                adv.lambda = v;
            }
            if let Some(v) = steps.or(cfg.get(s, "steps")?) {
                adv.steps = v;
            }
            let fixed_target: Option<usize> = match target {
                Some(t) => Some(t),
                None => cfg.get(s, "target")?,
            };
            // pool of held-out images, keep only those classified correctly
            let pool = synth_dataset(model.classes, n_images.div_ceil(model.classes) * 2 + 2, 32, 32, seed.wrapping_add(9))?;
            let preds = model.predict(&pool.images)?;
            let mut rows = Vec::new();
            let mut successes = 0usize;
            let mut attacked = 0usize;
            ensure_dir(&out)?;
            for (i, img) in pool.images.iter().enumerate() {
                if attacked == n_images {
                    break;
                }
                if preds[i] != pool.labels[i] {
                    continue;
                }
                let tgt = match fixed_target {
                    Some(t) => t,
                    None => runner_up_class(&model, img)?,
                };
                if tgt == pool.labels[i] {
                    continue;
                }
                let mut c = adv.clone();
                c.target_class = tgt;
                let r = attack(&model, img, &c)?;
                if r.success {
                    successes += 1;
                }
                // Fig.-style x10 amplified perturbation around mid-gray
                let amp = Tensor::from_vec(
                    img.shape.clone(),
                    r.x_adv
                        .data
                        .iter()
                        .zip(&img.data)
                        .map(|(a, o)| (0.5 + 10.0 * (a - o)).clamp(0.0, 1.0))
                        .collect(),
                )?;
                encode_png(&amp, &out.join(format!("perturbation_x10_{:03}.png", attacked)))?;
                encode_png(&r.x_adv, &out.join(format!("adv_{:03}.png", attacked)))?;
                rows.push(vec![
                    attacked.to_string(),
                    pool.labels[i].to_string(),
                    tgt.to_string(),
                    r.success.to_string(),
                    format!("{:.6}", r.linf),
                    format!("{:.6}", r.tv),
                    c.steps.to_string(),
                ]);
                attacked += 1;
            }
            write_csv(
                &out.join("report.csv"),
                &["image", "original", "target", "success", "linf", "tv", "steps"],
                &rows,
            )?;
            if model.weights_checksum() != before {
                return Err(AmvisError::ModelConfig("weights changed during attack".into()));
            }
            println!(
                "attacked {} images at epsilon {}: success rate {:.3}",
                attacked,
                adv.epsilon,
                successes as f64 / attacked.max(1) as f64
            );
            Ok(())
        }
        Command::Inspect { common, weights } => {
            let cfg = load_config(&common)?;
            let weights = require_path(&weights, &cfg, "inspect", "weights")?;
            let model = load_model(&weights)?;
            let (c, h, w) = model.input;
            let arch = match &model.arch {
                crate::models::ArchDesc::Cnn => "cnn".to_string(),
                crate::models::ArchDesc::Vit {
                    patch,
                    dim,
                    heads,
                    layers,
                    ..
                } => format!("vit(patch={},dim={},heads={},layers={})", patch, dim, heads, layers),
            };
            let n_params: usize = model.params().iter().map(|(_, t)| t.numel()).sum();
            println!("arch: {}", arch);
            println!("input: [{}, {}, {}]  classes: {}", c, h, w, model.classes);
            println!("parameters: {}", n_params);
            println!("weights checksum: {:016x}", model.weights_checksum());
            println!("taps:");
            for t in model.taps() {
                println!("  {:<12} layer {:<2} shape {:?}", t.name, t.layer, t.shape);
            }
            Ok(())
        }
        Command::CompareDomains {
            common,
            weights,
            unit,
            steps,
            seeds,
            cutoff,
            out,
        } => {
            let cfg = load_config(&common)?;
            let s = "compare-domains";
            let weights = require_path(&weights, &cfg, s, "weights")?;
            let units = parse_units(&unit, &cfg, s)?;
            let steps = pick(&steps, &cfg, s, "steps", 200)?;
            let n_seeds = pick(&seeds, &cfg, s, "seeds", 5)?;
            let cutoff = pick(&cutoff, &cfg, s, "cutoff", 0.25)?;
            let base_seed = pick(&common.seed, &cfg, s, "seed", 0)?;
            let model = load_model(&weights)?;
            let mut pixel_ratios = Vec::new();
            let mut fourier_ratios = Vec::new();
            let mut rows = Vec::new();
            for u in &units {
                for k in 0..n_seeds {
                    let seed = base_seed.wrapping_add(k as u64);
                    let (px, _) = pixel_am(&model, u, &AmConfig::pixel(steps, seed))?;
                    let (fx, _) = feature_vis(&model, u, &AmConfig::fourier(steps, seed))?;
                    let pr = high_freq_energy_ratio(&px, cutoff)?;
                    let fr = high_freq_energy_ratio(&fx, cutoff)?;
                    println!("{} seed {}: pixel {:.4}  fourier {:.4}", u, seed, pr, fr);
                    rows.push(vec![
                        u.to_string(),
                        seed.to_string(),
                        format!("{:.6}", pr),
                        format!("{:.6}", fr),
                    ]);
                    pixel_ratios.push(pr);
                    fourier_ratios.push(fr);
                }
            }
            let med = |v: &mut Vec<f64>| -> f64 {
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v[v.len() / 2]
            };
            let pm = med(&mut pixel_ratios);
            let fm = med(&mut fourier_ratios);
            println!(
                "median high-frequency ratio (cutoff {}): pixel {:.4}, fourier {:.4}",
                cutoff, pm, fm
            );
            if let Some(dir) = out.or_else(|| cfg.raw(s, "out").map(PathBuf::from)) {
                ensure_dir(&dir)?;
                write_csv(
                    &dir.join("compare.csv"),
                    &["unit", "seed", "pixel_ratio", "fourier_ratio"],
                    &rows,
                )?;
            }
            Ok(())
        }
    }
}
