//! Robust-architecture design toolkit.
//!
//! This crate models ResNet-style bottleneck architectures as explicit
//! configuration documents and provides exact parameter/MAC accounting, a
//! design-guideline linter, parameter-budget width fitting, a small
//! reverse-mode tensor engine, white-box gradient attacks (FGSM/PGD), and
//! desk-scale adversarial training — everything needed to reproduce
//! capacity-controlled robustness studies end to end.

pub mod analyze;
pub mod attack;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fit;
pub mod guidelines;
pub mod net;
pub mod plan;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use analyze::{count_macs, count_params, layer_table, LayerRow, MacReport, ParamReport};
pub use config::{parse_config, preset, preset_names, validate, ArchConfig};
pub use error::{Error, Result};
pub use fit::{fit_width, scale_depth, sweep_depth_width, FitConstraints, FitMode};
pub use guidelines::{
    check_depth_rule, compare_configs, evaluate_guidelines, GuidelineFinding, GuidelineParams,
    GuidelineReport, GuidelineStatus,
};
pub use attack::{
    fgsm, pgd, project_linf, robust_accuracy, AttackConfig, AttackModel, RobustnessResult,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use data::{load_idx, synth_generate, Dataset, SynthSpec};
pub use net::{BatchGrads, Mode, Network, Param, RunningStats};
pub use train::{
    accuracy, cyclic_lr, detect_catastrophic_overfitting, fast_at, natural, standard_at,
    EpochRecord, TrainConfig, TrainHistory, TrainMode,
};
