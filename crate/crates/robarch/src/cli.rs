//! Command-line surface. One command per invocation; exit code 0 on
//! success, 1 on domain errors (invalid configs, failed fits, I/O), 2 on
//! usage errors (unknown commands or flags). Output files are byte-identical
//! across runs with identical inputs and seeds.
//!
//! `--seed` is a master seed: parameter initialization, batch shuffling,
//! attack noise, and synthetic data derive their own independent streams
//! from it by fixed offsets.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analyze::{count_macs, count_params, layer_table};
use crate::attack::{robust_accuracy, AttackConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{emit_config, parse_config, preset, preset_names, ArchConfig};
use crate::data::{load_idx, synth_generate, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::fit::{fit_width, sweep_depth_width, FitConstraints, FitMode, SweepRow};
use crate::guidelines::{compare_configs, evaluate_guidelines, GuidelineParams};
use crate::net::Network;
use crate::report;
use crate::train::{detect_catastrophic_overfitting, train, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(
    name = "robarch",
    version,
    about = "Robust-architecture toolkit: analysis, design-rule linting, budget fitting, and desk-scale adversarial training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Architecture input: a JSON config file or a built-in preset.
#[derive(Args)]
#[group(required = true, multiple = false)]
pub struct ArchSource {
    /// Path to an architecture config JSON document.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see `preset --list`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

impl ArchSource {
    fn load(&self) -> Result<ArchConfig> {
        match (&self.config, &self.preset) {
            (Some(path), None) => parse_config(&std::fs::read_to_string(path)?),
            (None, Some(name)) => preset(name),
            _ => unreachable!("clap enforces exactly one source"),
        }
    }
}

/// Dataset input shared by `train` and `attack`: an IDX file pair, or the
/// synthetic generator configured by the remaining flags.
#[derive(Args)]
pub struct DataArgs {
    /// IDX image file; requires --idx-labels and disables the generator.
    #[arg(long, value_name = "FILE", requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    /// IDX label file accompanying --idx-images.
    #[arg(long, value_name = "FILE")]
    idx_labels: Option<PathBuf>,
    /// Holdout IDX image file (training only).
    #[arg(long, value_name = "FILE", requires = "holdout_labels")]
    holdout_images: Option<PathBuf>,
    /// Holdout IDX label file.
    #[arg(long, value_name = "FILE")]
    holdout_labels: Option<PathBuf>,
    /// Synthetic classes.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Synthetic training samples per class.
    #[arg(long, default_value_t = 160)]
    per_class: usize,
    /// Synthetic holdout samples per class.
    #[arg(long, default_value_t = 32)]
    holdout_per_class: usize,
    /// Synthetic image resolution.
    #[arg(long, default_value_t = 32)]
    data_resolution: usize,
    /// Synthetic image channels.
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Minimum pairwise template separation (max-abs distance).
    #[arg(long, default_value_t = 0.08)]
    margin: f64,
    /// Per-pixel Gaussian noise level.
    #[arg(long, default_value_t = 0.06)]
    noise_std: f64,
}

impl DataArgs {
    fn synth_spec(&self, per_class: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            class_count: self.classes,
            per_class,
            resolution: self.data_resolution,
            channels: self.channels,
            margin: self.margin,
            noise_std: self.noise_std,
            seed,
        }
    }

    fn load_train_and_holdout(&self, seed: u64) -> Result<(Dataset<f32>, Dataset<f32>)> {
        if let (Some(img), Some(lbl)) = (&self.idx_images, &self.idx_labels) {
            let train_set = load_idx(img, lbl)?;
            let (hi, hl) = match (&self.holdout_images, &self.holdout_labels) {
                (Some(hi), Some(hl)) => (hi, hl),
                _ => {
                    return Err(Error::Invalid(
                        "IDX training needs --holdout-images/--holdout-labels".into(),
                    ))
                }
            };
            return Ok((train_set, load_idx(hi, hl)?));
        }
        let (train_set, _) = synth_generate(&self.synth_spec(self.per_class, seed), 0)?;
        let (holdout, _) = synth_generate(&self.synth_spec(self.holdout_per_class, seed), 1)?;
        Ok((train_set, holdout))
    }

    fn load_eval(&self, seed: u64, split: u64) -> Result<Dataset<f32>> {
        if let (Some(img), Some(lbl)) = (&self.idx_images, &self.idx_labels) {
            return load_idx(img, lbl);
        }
        let (set, _) = synth_generate(&self.synth_spec(self.holdout_per_class, seed), split)?;
        Ok(set)
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CliFitMode {
    /// Every stage width scales independently.
    ScaleAll,
    /// First width is free; later widths keep the template's expansion ratios.
    BaseWidth,
}

impl From<CliFitMode> for FitMode {
    fn from(m: CliFitMode) -> FitMode {
        match m {
            CliFitMode::ScaleAll => FitMode::ScaleAllWidths,
            CliFitMode::BaseWidth => FitMode::BaseWidthWithFixedE,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CliTrainMode {
    FastAt,
    StandardAt,
    Natural,
}

impl CliTrainMode {
    fn to_mode(self) -> TrainMode {
        match self {
            CliTrainMode::FastAt => TrainMode::FastAt,
            CliTrainMode::StandardAt => TrainMode::StandardAt,
            CliTrainMode::Natural => TrainMode::Natural,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CliTrainMode::FastAt => "fast_at",
            CliTrainMode::StandardAt => "standard_at",
            CliTrainMode::Natural => "natural",
        }
    }
}

/// Accepts plain decimals (`0.0157`) or pixel fractions (`4/255`).
fn parse_eps(s: &str) -> std::result::Result<f64, String> {
    let value = if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|e| format!("bad numerator: {e}"))?;
        let den: f64 = den.trim().parse().map_err(|e| format!("bad denominator: {e}"))?;
        if den == 0.0 {
            return Err("denominator is zero".into());
        }
        num / den
    } else {
        s.trim().parse().map_err(|e| format!("bad number: {e}"))?
    };
    if !value.is_finite() || value < 0.0 {
        return Err("must be finite and non-negative".into());
    }
    Ok(value)
}

#[derive(Subcommand)]
pub enum Command {
    /// Exact parameter totals, and MAC totals at a resolution.
    Analyze {
        #[command(flatten)]
        arch: ArchSource,
        /// Input resolution for MAC counting (square).
        #[arg(long)]
        resolution: Option<u32>,
        /// Write the JSON report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Per-layer parameter/MAC table as CSV.
    Layers {
        #[command(flatten)]
        arch: ArchSource,
        #[arg(long, default_value_t = 224)]
        resolution: u32,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Evaluate all 18 design rules against an architecture.
    Validate {
        #[command(flatten)]
        arch: ArchSource,
        /// Depth-rule constant c in d3 > c*d4.
        #[arg(long, default_value_t = 3)]
        depth_rule_c: u32,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Structural and rule-status diff between two architectures.
    ///
    /// Each argument is a config path if such a file exists, else a preset name.
    Compare {
        a: String,
        b: String,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Fit stage widths to a parameter budget.
    FitBudget {
        #[command(flatten)]
        arch: ArchSource,
        /// Target total parameter count.
        #[arg(long)]
        budget: u64,
        #[arg(long, value_enum, default_value_t = CliFitMode::ScaleAll)]
        mode: CliFitMode,
        /// Width lattice unit.
        #[arg(long, default_value_t = 8)]
        rounding: u32,
        /// Acceptable relative budget deviation.
        #[arg(long, default_value_t = 0.005)]
        tolerance: f64,
        /// Write the fitted config JSON here.
        #[arg(long, value_name = "FILE")]
        emit: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Emit a built-in preset config, or list all presets.
    Preset {
        /// Preset name to emit.
        #[arg(long, required_unless_present = "list", conflicts_with = "list")]
        name: Option<String>,
        /// List available preset names.
        #[arg(long)]
        list: bool,
        /// Write the config JSON here instead of stdout.
        #[arg(long, value_name = "FILE")]
        emit: Option<PathBuf>,
    },
    /// Fit one architecture per depth vector against a shared budget.
    Sweep {
        #[command(flatten)]
        arch: ArchSource,
        #[arg(long)]
        budget: u64,
        /// Depth grid, e.g. `3x4x6x3,5x8x13x1`.
        #[arg(long)]
        depths: String,
        #[arg(long, value_enum, default_value_t = CliFitMode::ScaleAll)]
        mode: CliFitMode,
        #[arg(long, default_value_t = 8)]
        rounding: u32,
        #[arg(long, default_value_t = 0.005)]
        tolerance: f64,
        /// Worker threads for the sweep (merged in grid order).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train a network on an IDX or synthetic dataset.
    Train {
        #[command(flatten)]
        arch: ArchSource,
        #[arg(long, value_enum, default_value_t = CliTrainMode::FastAt)]
        mode: CliTrainMode,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        /// Evaluation budget; training perturbs at test-eps × multiplier.
        #[arg(long, value_parser = parse_eps, default_value = "4/255")]
        test_eps: f64,
        #[arg(long, default_value_t = 1.25)]
        train_eps_multiplier: f64,
        /// Inner maximization steps (standard-at).
        #[arg(long, default_value_t = 10)]
        inner_steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr_max: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 5e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Master seed for init/shuffle/attack/data streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
        /// Write the per-epoch training curve CSV here.
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
        /// Write the trained checkpoint here.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's robust accuracy under PGD.
    Attack {
        /// Checkpoint produced by `train --checkpoint`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Budgets to evaluate, e.g. `2/255,4/255,8/255`.
        #[arg(long, value_parser = parse_eps, value_delimiter = ',', default_value = "4/255")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        /// Step size; defaults to 2ε/steps.
        #[arg(long, value_parser = parse_eps)]
        alpha: Option<f64>,
        /// Start each attack from the clean input instead of a random point.
        #[arg(long)]
        no_rand_init: bool,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic split id to evaluate (1 = holdout convention).
        #[arg(long, default_value_t = 1)]
        split: u64,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Writes `content` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_path_or_preset(s: &str) -> Result<ArchConfig> {
    if Path::new(s).exists() {
        parse_config(&std::fs::read_to_string(s)?)
    } else {
        preset(s).map_err(|_| {
            Error::Invalid(format!(
                "`{s}` is neither an existing config file nor a preset name"
            ))
        })
    }
}

fn parse_depth_grid(s: &str) -> Result<Vec<Vec<u32>>> {
    s.split(',')
        .map(|vector| {
            vector
                .trim()
                .split('x')
                .map(|d| {
                    d.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::Invalid(format!("bad depth `{d}`: {e}")))
                })
                .collect()
        })
        .collect()
}

/// Sweep rows computed across `jobs` threads, merged back in grid order.
fn parallel_sweep(
    base: &ArchConfig,
    grid: &[Vec<u32>],
    constraints: &FitConstraints,
    jobs: usize,
) -> Vec<SweepRow> {
    if jobs <= 1 || grid.len() <= 1 {
        return sweep_depth_width(base, grid, constraints);
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<SweepRow>> = Vec::new();
    slots.resize_with(grid.len(), || None);
    let slots = Mutex::new(slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(grid.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                let row = sweep_depth_width(base, &grid[i..i + 1], constraints)
                    .pop()
                    .expect("one row per vector");
                slots.lock().expect("sweep worker poisoned")[i] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .expect("sweep worker poisoned")
        .into_iter()
        .map(|slot| slot.expect("all rows computed"))
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            arch,
            resolution,
            out,
        } => {
            let cfg = arch.load()?;
            let params = count_params(&cfg);
            let macs = match resolution {
                Some(r) => Some(count_macs(&cfg, r)?),
                None => None,
            };
            let value = report::analyze_report(&cfg, &params, macs.as_ref());
            emit(out.as_deref(), &report::to_json_string(&value))?;
            if out.is_some() {
                println!("{}: {} parameters", cfg.name, params.total);
            }
            Ok(())
        }
        Command::Layers {
            arch,
            resolution,
            out,
        } => {
            let cfg = arch.load()?;
            let rows = layer_table(&cfg, resolution)?;
            emit(out.as_deref(), &report::layers_csv(&rows))
        }
        Command::Validate {
            arch,
            depth_rule_c,
            out,
        } => {
            let cfg = arch.load()?;
            let lint = evaluate_guidelines(&cfg, &GuidelineParams { c: depth_rule_c });
            let value = report::validate_report(&lint);
            emit(out.as_deref(), &report::to_json_string(&value))
        }
        Command::Compare { a, b, out } => {
            let ca = load_path_or_preset(&a)?;
            let cb = load_path_or_preset(&b)?;
            let diff = compare_configs(&ca, &cb);
            let value = report::compare_report(&ca, &cb, &diff);
            emit(out.as_deref(), &report::to_json_string(&value))
        }
        Command::FitBudget {
            arch,
            budget,
            mode,
            rounding,
            tolerance,
            emit: emit_path,
            out,
        } => {
            let cfg = arch.load()?;
            let constraints = FitConstraints {
                budget,
                free: mode.into(),
                rounding,
                tolerance,
            };
            let fitted = fit_width(&cfg, &constraints)?;
            let params = count_params(&fitted);
            if let Some(p) = &emit_path {
                std::fs::write(p, emit_config(&fitted))?;
            }
            let value = report::fit_report(&fitted, budget, &params);
            emit(out.as_deref(), &report::to_json_string(&value))
        }
        Command::Preset { name, list, emit: emit_path } => {
            if list {
                let mut listing = String::new();
                for n in preset_names() {
                    listing.push_str(n);
                    listing.push('\n');
                }
                print!("{listing}");
                return Ok(());
            }
            let cfg = preset(&name.expect("clap requires --name without --list"))?;
            emit(emit_path.as_deref(), &emit_config(&cfg))
        }
        Command::Sweep {
            arch,
            budget,
            depths,
            mode,
            rounding,
            tolerance,
            jobs,
            out,
        } => {
            let cfg = arch.load()?;
            let grid = parse_depth_grid(&depths)?;
            let constraints = FitConstraints {
                budget,
                free: mode.into(),
                rounding,
                tolerance,
            };
            let rows = parallel_sweep(&cfg, &grid, &constraints, jobs);
            emit(out.as_deref(), &report::sweep_csv(&rows))
        }
        Command::Train {
            arch,
            mode,
            epochs,
            test_eps,
            train_eps_multiplier,
            inner_steps,
            lr_max,
            momentum,
            weight_decay,
            batch_size,
            seed,
            data,
            history: history_path,
            checkpoint,
            out,
        } => {
            let mut cfg = arch.load()?;
            let (train_set, holdout) = data.load_train_and_holdout(seed)?;
            // The dataset decides the head size; a flag-configured class
            // count overrides whatever the config document says.
            if cfg.num_classes as usize != train_set.class_count {
                cfg.num_classes = train_set.class_count as u32;
                crate::config::validate(&cfg)?;
            }
            let tc = TrainConfig {
                mode: mode.to_mode(),
                epochs,
                test_eps,
                train_eps_multiplier,
                inner_steps,
                lr_max,
                momentum,
                weight_decay,
                batch_size,
                seed,
            };
            let mut net = Network::<f32>::instantiate(&cfg, seed);
            let history = train(&mut net, &train_set, &holdout, &tc)?;
            if let Some(p) = &history_path {
                std::fs::write(p, report::history_csv(&history))?;
            }
            if let Some(p) = &checkpoint {
                save_checkpoint(&net, p)?;
            }
            let collapse = detect_catastrophic_overfitting(&history);
            let value = report::train_report(&cfg.name, mode.name(), &tc, &history, collapse);
            emit(out.as_deref(), &report::to_json_string(&value))
        }
        Command::Attack {
            checkpoint,
            eps,
            steps,
            restarts,
            alpha,
            no_rand_init,
            batch_size,
            seed,
            split,
            data,
            out,
        } => {
            let mut net = load_checkpoint(&checkpoint)?;
            let dataset = data.load_eval(seed, split)?;
            let cfgs: Vec<AttackConfig> = eps
                .iter()
                .map(|&e| {
                    let mut c = AttackConfig::pgd(e, steps).with_restarts(restarts);
                    if let Some(a) = alpha {
                        c.alpha = a;
                    }
                    if no_rand_init {
                        c.rand_init = false;
                    }
                    c
                })
                .collect();
            let result = robust_accuracy(&mut net, &dataset, &cfgs, batch_size, seed)?;
            let value = report::attack_report(&net.config.name, &result);
            emit(out.as_deref(), &report::to_json_string(&value))
        }
    }
}
