//! Named preset configurations.
//!
//! Covers the baseline, the incremental "roadmap" models (s0–s7, m1–m3,
//! l1–l4, with robarch-s/m/l as the shipped tiers), and the single-knob study
//! variants (kernel, dilation, activation, SE, normalization, stem, dense,
//! group/width rows). Generic `d-...` and `w-...` names build depth- and
//! width-substituted baselines, e.g. `d-5-8-13-1` or `w-512-768-1152-1728`.
//!
//! Tier widths that have no published value (robarch-s/m and the deeper large
//! variants) are produced by a budget fit against their published parameter
//! totals at first use and cached for the process lifetime.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{
    ActKind, ActivationSpec, ArchConfig, DenseMode, HeadConfig, NormKind, NormSpec, Pooling,
    SeBase, SeConfig, StageConfig, StemConfig, StemKind,
};
use crate::error::{Error, Result};
use crate::fit::{fit_width, FitConstraints, FitMode};

/// The classic 4-stage baseline: D-3-4-6-3, W-256-512-1024-2048, b=0.25, g=1,
/// 7x7 conv-plus-maxpool stem of width 64.
fn resnet50() -> ArchConfig {
    let stage = |depth: u32, width: u32, stride: u32| StageConfig {
        depth,
        width,
        bottleneck_multiplier: 0.25,
        groups: 1,
        kernel: 3,
        dilation: 1,
        stride,
        dense_ratio: 1,
        dense_mode: DenseMode::Sum,
        se: SeConfig {
            enabled: false,
            ratio: 0.25,
            base: SeBase::BlockInput,
            activation: ActKind::Relu,
        },
        activation: ActivationSpec {
            kind: ActKind::Relu,
            pattern: [true; 3],
        },
        norm: NormSpec {
            kind: NormKind::BatchNorm,
            pattern: [true; 3],
        },
    };
    ArchConfig {
        name: "resnet50".to_string(),
        num_classes: 1000,
        input_channels: 3,
        stem: StemConfig {
            kind: StemKind::ConvMaxpool,
            width: 64,
            kernel: 7,
            patch_stride: None,
        },
        stages: vec![
            stage(3, 256, 1),
            stage(4, 512, 2),
            stage(6, 1024, 2),
            stage(3, 2048, 2),
        ],
        head: HeadConfig {
            pooling: Pooling::GlobalAverage,
            bias: true,
        },
    }
}

/// A depth-substituted baseline (3–6 stages). Widths beyond the baseline's
/// four positions repeat the final width.
fn depth_variant(depths: &[u32]) -> ArchConfig {
    let base = resnet50();
    let widths = super::default_widths(depths.len());
    let mut stages = Vec::with_capacity(depths.len());
    for (i, &d) in depths.iter().enumerate() {
        let template = base.stages[i.min(3)].clone();
        stages.push(StageConfig {
            depth: d,
            width: widths[i],
            stride: if i == 0 { 1 } else { 2 },
            ..template
        });
    }
    ArchConfig {
        stages,
        ..base
    }
}

fn for_each_stage(mut cfg: ArchConfig, f: impl Fn(&mut StageConfig)) -> ArchConfig {
    for s in &mut cfg.stages {
        f(s);
    }
    cfg
}

fn with_se(cfg: ArchConfig, activation: ActKind) -> ArchConfig {
    for_each_stage(cfg, |s| {
        s.se.enabled = true;
        s.se.activation = activation;
    })
}

fn with_stem(mut cfg: ArchConfig, kind: StemKind, width: u32, kernel: u32) -> ArchConfig {
    cfg.stem = StemConfig {
        kind,
        width,
        kernel,
        patch_stride: if kind == StemKind::Patchify {
            Some(kernel)
        } else {
            None
        },
    };
    cfg.stages[0].stride = if kind == StemKind::ConvStageDownsample {
        2
    } else {
        1
    };
    cfg
}

/// The small-tier structure before width fitting: D-5-8-13-1 on an e=2 width
/// profile, g=2, b=0.25, width-96 downsampling stem, SE(relu), SiLU blocks,
/// and the first block norm removed.
fn s7_template() -> ArchConfig {
    let cfg = resnet50().with_depths(&[5, 8, 13, 1]);
    let cfg = for_each_stage(cfg, |s| {
        s.groups = 2;
        s.activation.kind = ActKind::Silu;
        s.norm.pattern = [false, true, true];
    });
    let cfg = with_se(cfg, ActKind::Relu);
    with_stem(cfg, StemKind::ConvStageDownsample, 96, 7)
}

/// Budget-fits `template`'s widths to `budget` parameters (multiple-of-8
/// lattice, 0.5% tolerance).
fn fit(template: ArchConfig, budget: u64, name: &str) -> Result<ArchConfig> {
    let fitted = fit_width(
        &template,
        &FitConstraints {
            budget,
            free: FitMode::ScaleAllWidths,
            rounding: 8,
            tolerance: 0.005,
        },
    )?;
    Ok(fitted.named(name))
}

/// Builds the presets whose widths come from budget fits, keyed by name.
///
/// Every roadmap step holds total capacity roughly constant, so structural
/// changes that add or remove parameters (SE, kernel size, stem, depth) get
/// their own width fit against that step's capacity target; steps that are
/// capacity-neutral at fixed widths (activation and norm-pattern swaps)
/// share the widths of their fitted neighbor.
fn fitted_presets() -> &'static HashMap<&'static str, ArchConfig> {
    static CACHE: OnceLock<HashMap<&'static str, ArchConfig>> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut map = HashMap::new();
        let s7 = fit(s7_template(), 26_140_000, "s7").expect("s7 fit");
        let m1 = fit(
            for_each_stage(s7_template(), |s| s.kernel = 5),
            45_950_000,
            "m1",
        )
        .expect("m1 fit");
        let m2 = fit(
            s7.clone().with_depths(&[7, 11, 18, 1]),
            45_900_000,
            "m2",
        )
        .expect("m2 fit");
        let l1 = fit(
            for_each_stage(s7_template().with_depths(&[7, 11, 18, 1]), |s| {
                s.kernel = 7
            }),
            103_890_000,
            "l1",
        )
        .expect("l1 fit");
        let l3 = fit(
            s7.clone().with_depths(&[8, 13, 21, 2]),
            104_130_000,
            "l3",
        )
        .expect("l3 fit");
        let l4 = fit(
            s7.clone().with_depths(&[10, 16, 26, 2]),
            104_140_000,
            "l4",
        )
        .expect("l4 fit");
        // s3: the small-tier structure before SE, SiLU, and the norm-pattern
        // change; s2a additionally reverts the stem.
        let s3_template = for_each_stage(s7_template(), |s| {
            s.se.enabled = false;
            s.activation.kind = ActKind::Relu;
            s.norm.pattern = [true; 3];
        });
        let s2a_template = with_stem(s3_template.clone(), StemKind::ConvMaxpool, 64, 7);
        let s3 = fit(s3_template, 25_850_000, "s3").expect("s3 fit");
        let s2a = fit(s2a_template, 25_840_000, "s2a").expect("s2a fit");
        // s2b: the e=1.5 width profile with g=1, before the stem/SE/activation
        // steps of the roadmap.
        let s2b_template = resnet50()
            .with_depths(&[5, 8, 13, 1])
            .with_widths(&[512, 768, 1152, 1728]);
        let s2b = fit(s2b_template, 25_530_000, "s2b").expect("s2b fit");
        map.insert("s7", s7);
        map.insert("m1", m1);
        map.insert("m2", m2);
        map.insert("l1", l1);
        map.insert("l3", l3);
        map.insert("l4", l4);
        map.insert("s3", s3);
        map.insert("s2a", s2a);
        map.insert("s2b", s2b);
        map
    })
}

fn fitted(name: &str) -> ArchConfig {
    fitted_presets()[name].clone()
}

/// Roadmap models derived from the fitted small tier by inverting the
/// published "+ modification" chain.
fn roadmap(name: &str) -> Option<ArchConfig> {
    let cfg = match name {
        "s0" => resnet50().named("s0"),
        "s1" => resnet50().with_depths(&[5, 8, 13, 1]).named("s1"),
        "s2a" => fitted("s2a"),
        "s2b" => fitted("s2b"),
        "s3" => fitted("s3"),
        "s4" => {
            let s5 = roadmap("s5").unwrap();
            for_each_stage(s5, |s| s.activation.kind = ActKind::Relu).named("s4")
        }
        "s5" => {
            let s7 = fitted("s7");
            for_each_stage(s7, |s| s.norm.pattern = [true; 3]).named("s5")
        }
        "s6" => {
            let s5 = roadmap("s5").unwrap();
            for_each_stage(s5, |s| s.se.activation = ActKind::Silu).named("s6")
        }
        "s7" => fitted("s7"),
        "m1" => fitted("m1"),
        "m2" => fitted("m2"),
        "m3" => fitted("s7")
            .with_widths(&[384, 760, 1504, 2944])
            .named("m3"),
        "l1" => fitted("l1"),
        "l2" => fitted("m2")
            .with_widths(&[512, 1024, 2016, 4032])
            .named("l2"),
        "l3" => fitted("l3"),
        "l4" => fitted("l4"),
        _ => return None,
    };
    Some(cfg)
}

/// Single-knob study variants on the ResNet-50 baseline.
fn study_variant(name: &str) -> Option<ArchConfig> {
    let base = resnet50;
    let cfg = match name {
        "kernel5" => for_each_stage(base(), |s| s.kernel = 5),
        "kernel7" => for_each_stage(base(), |s| s.kernel = 7),
        "dilation2" => for_each_stage(base(), |s| s.dilation = 2),
        "dilation3" => for_each_stage(base(), |s| s.dilation = 3),
        "act-gelu" => for_each_stage(base(), |s| s.activation.kind = ActKind::Gelu),
        "act-silu" => for_each_stage(base(), |s| s.activation.kind = ActKind::Silu),
        "act-prelu" => for_each_stage(base(), |s| s.activation.kind = ActKind::Prelu),
        "act-psilu" => for_each_stage(base(), |s| s.activation.kind = ActKind::Psilu),
        "act-pssilu" => for_each_stage(base(), |s| s.activation.kind = ActKind::Pssilu),
        "act-relu-relu-0" => for_each_stage(base(), |s| s.activation.pattern = [true, true, false]),
        "act-relu-0-relu" => for_each_stage(base(), |s| s.activation.pattern = [true, false, true]),
        "act-0-relu-relu" => for_each_stage(base(), |s| s.activation.pattern = [false, true, true]),
        "act-0-0-relu" => for_each_stage(base(), |s| s.activation.pattern = [false, false, true]),
        "act-0-relu-0" => for_each_stage(base(), |s| s.activation.pattern = [false, true, false]),
        "act-relu-0-0" => for_each_stage(base(), |s| s.activation.pattern = [true, false, false]),
        "se-relu" => with_se(base(), ActKind::Relu),
        "se-silu" => with_se(base(), ActKind::Silu),
        "se-gelu" => with_se(base(), ActKind::Gelu),
        "se-psilu" => with_se(base(), ActKind::Psilu),
        "se-pssilu" => with_se(base(), ActKind::Pssilu),
        "norm-in" => for_each_stage(base(), |s| s.norm.kind = NormKind::InstanceNorm),
        "norm-bn-bn-0" => for_each_stage(base(), |s| s.norm.pattern = [true, true, false]),
        "norm-bn-0-bn" => for_each_stage(base(), |s| s.norm.pattern = [true, false, true]),
        "norm-0-bn-bn" => for_each_stage(base(), |s| s.norm.pattern = [false, true, true]),
        "norm-0-0-bn" => for_each_stage(base(), |s| s.norm.pattern = [false, false, true]),
        "norm-0-bn-0" => for_each_stage(base(), |s| s.norm.pattern = [false, true, false]),
        "norm-bn-0-0" => for_each_stage(base(), |s| s.norm.pattern = [true, false, false]),
        "stem-width-32" => with_stem(base(), StemKind::ConvMaxpool, 32, 7),
        "stem-width-96" => with_stem(base(), StemKind::ConvMaxpool, 96, 7),
        "stem-kernel-3" => with_stem(base(), StemKind::ConvMaxpool, 64, 3),
        "stem-kernel-5" => with_stem(base(), StemKind::ConvMaxpool, 64, 5),
        "stem-kernel-9" => with_stem(base(), StemKind::ConvMaxpool, 64, 9),
        "stem-movedown" => with_stem(base(), StemKind::ConvStageDownsample, 64, 7),
        "stem-downsample" => with_stem(base(), StemKind::ConvNopool, 64, 7),
        "patchify-2" => with_stem(base(), StemKind::Patchify, 64, 2),
        "patchify-4" => with_stem(base(), StemKind::Patchify, 64, 4),
        "dense-2" => for_each_stage(base(), |s| s.dense_ratio = s.depth.min(2)),
        "dense-3" => for_each_stage(base(), |s| s.dense_ratio = s.depth.min(3)),
        "dense-4" => for_each_stage(base(), |s| s.dense_ratio = s.depth.min(4)),
        "dense-5" => for_each_stage(base(), |s| s.dense_ratio = s.depth.min(5)),
        "g2" => for_each_stage(
            base().with_widths(&[256, 512, 1080, 2504]),
            |s| s.groups = 2,
        ),
        _ => return None,
    };
    Some(cfg.named(name))
}

/// Parses generic `d-...` / `w-...` names into depth-/width-substituted
/// baselines.
fn generic_variant(name: &str) -> Option<ArchConfig> {
    let parse_vec = |body: &str| -> Option<Vec<u32>> {
        body.split('-').map(|p| p.parse::<u32>().ok()).collect()
    };
    if let Some(body) = name.strip_prefix("d-") {
        let depths = parse_vec(body)?;
        if !(3..=6).contains(&depths.len()) {
            return None;
        }
        return Some(depth_variant(&depths).named(name));
    }
    if let Some(body) = name.strip_prefix("w-") {
        let widths = parse_vec(body)?;
        if widths.len() != 4 {
            return None;
        }
        return Some(resnet50().with_widths(&widths).named(name));
    }
    None
}

/// Returns the named preset configuration.
pub fn preset(name: &str) -> Result<ArchConfig> {
    let lname = name.to_ascii_lowercase();
    let cfg = match lname.as_str() {
        "resnet50" => Some(resnet50()),
        "robarch-s" => Some(fitted("s7").named("robarch-s")),
        "robarch-m" => Some(fitted("m2").named("robarch-m")),
        "robarch-l" => roadmap("l2").map(|c| c.named("robarch-l")),
        other => roadmap(other)
            .or_else(|| study_variant(other))
            .or_else(|| generic_variant(other)),
    };
    let cfg = cfg.ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    super::validate(&cfg)?;
    Ok(cfg)
}

/// The curated preset names (generic `d-...`/`w-...` patterns excluded).
pub fn preset_names() -> Vec<&'static str> {
    vec![
        "resnet50",
        "robarch-s",
        "robarch-m",
        "robarch-l",
        "s0",
        "s1",
        "s2a",
        "s2b",
        "s3",
        "s4",
        "s5",
        "s6",
        "s7",
        "m1",
        "m2",
        "m3",
        "l1",
        "l2",
        "l3",
        "l4",
        "kernel5",
        "kernel7",
        "dilation2",
        "dilation3",
        "act-gelu",
        "act-silu",
        "act-prelu",
        "act-psilu",
        "act-pssilu",
        "act-relu-relu-0",
        "act-relu-0-relu",
        "act-0-relu-relu",
        "act-0-0-relu",
        "act-0-relu-0",
        "act-relu-0-0",
        "se-relu",
        "se-silu",
        "se-gelu",
        "se-psilu",
        "se-pssilu",
        "norm-in",
        "norm-bn-bn-0",
        "norm-bn-0-bn",
        "norm-0-bn-bn",
        "norm-0-0-bn",
        "norm-0-bn-0",
        "norm-bn-0-0",
        "stem-width-32",
        "stem-width-96",
        "stem-kernel-3",
        "stem-kernel-5",
        "stem-kernel-9",
        "stem-movedown",
        "stem-downsample",
        "patchify-2",
        "patchify-4",
        "dense-2",
        "dense-3",
        "dense-4",
        "dense-5",
        "g2",
    ]
}
