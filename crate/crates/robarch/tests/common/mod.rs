//! Shared test utilities: an independent enumeration oracle for parameter
//! and MAC counts, written directly against the architecture semantics
//! (bottleneck blocks, SE, dense connectivity, projection shortcuts) without
//! touching the library's plan/analyze code paths.

#![allow(dead_code)]

use robarch::config::{ActKind, ArchConfig, DenseMode, NormKind, SeBase, StemKind};

fn act_scalars(kind: ActKind) -> u64 {
    match kind {
        ActKind::Relu | ActKind::Gelu | ActKind::Silu => 0,
        ActKind::Prelu | ActKind::Psilu => 1,
        ActKind::Pssilu => 2,
    }
}

fn norm_scalars(kind: NormKind, channels: u64) -> u64 {
    match kind {
        NormKind::BatchNorm => 2 * channels,
        NormKind::InstanceNorm => 0,
    }
}

/// Stage-input channel count for block `b` (0-based) of a stage, given the
/// channels entering the stage.
fn block_input(stage: &robarch::config::StageConfig, b: u32, stage_in: u64) -> u64 {
    if b == 0 {
        stage_in
    } else {
        match stage.dense_mode {
            DenseMode::Sum => u64::from(stage.width),
            DenseMode::Concat => u64::from(stage.width) * u64::from(stage.dense_ratio.min(b)),
        }
    }
}

/// Counts trainable parameters by direct enumeration.
pub fn oracle_params(cfg: &ArchConfig) -> u64 {
    let mut total = 0u64;
    let s1 = &cfg.stages[0];
    let k = u64::from(cfg.stem.kernel);
    total += k * k * u64::from(cfg.input_channels) * u64::from(cfg.stem.width);
    total += norm_scalars(s1.norm.kind, u64::from(cfg.stem.width));
    total += act_scalars(s1.activation.kind);

    let mut prev = u64::from(cfg.stem.width);
    for s in &cfg.stages {
        let w = u64::from(s.width);
        let wb = (f64::from(s.width) * s.bottleneck_multiplier).round() as u64;
        let k = u64::from(s.kernel);
        let g = u64::from(s.groups);
        for b in 0..s.depth {
            let input = block_input(s, b, prev);
            let stride = if b == 0 { u64::from(s.stride) } else { 1 };
            total += input * wb;
            if s.norm.pattern[0] {
                total += norm_scalars(s.norm.kind, wb);
            }
            if s.activation.pattern[0] {
                total += act_scalars(s.activation.kind);
            }
            total += k * k * (wb / g) * wb;
            if s.norm.pattern[1] {
                total += norm_scalars(s.norm.kind, wb);
            }
            if s.activation.pattern[1] {
                total += act_scalars(s.activation.kind);
            }
            if s.se.enabled {
                let base = match s.se.base {
                    SeBase::BlockInput => input,
                    SeBase::Inner => wb,
                };
                let hidden = ((base as f64 * s.se.ratio).round() as u64).max(1);
                total += wb * hidden + hidden;
                total += act_scalars(s.se.activation);
                total += hidden * wb + wb;
            }
            total += wb * w;
            if s.norm.pattern[2] {
                total += norm_scalars(s.norm.kind, w);
            }
            if input != w || stride != 1 {
                total += input * w; // 1x1 projection conv
                total += 2 * w; // projection batch norm, regardless of stage norm kind
            }
            if s.activation.pattern[2] {
                total += act_scalars(s.activation.kind);
            }
        }
        prev = w;
    }

    total += prev * u64::from(cfg.num_classes);
    if cfg.head.bias {
        total += u64::from(cfg.num_classes);
    }
    total
}

fn conv_out(h: u64, k: u64, stride: u64, pad: u64, dilation: u64) -> u64 {
    (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1
}

/// Counts per-sample MACs by direct enumeration at a square resolution.
pub fn oracle_macs(cfg: &ArchConfig, resolution: u64) -> u64 {
    let mut total = 0u64;
    let (k, stride, pad) = match cfg.stem.kind {
        StemKind::Patchify => {
            let p = u64::from(cfg.stem.patch_stride.unwrap());
            (p, p, 0)
        }
        _ => (
            u64::from(cfg.stem.kernel),
            2,
            (u64::from(cfg.stem.kernel) - 1) / 2,
        ),
    };
    let mut h = conv_out(resolution, k, stride, pad, 1);
    total += h * h * k * k * u64::from(cfg.input_channels) * u64::from(cfg.stem.width);
    if cfg.stem.kind == StemKind::ConvMaxpool {
        h = conv_out(h, 3, 2, 1, 1);
    }

    let mut prev = u64::from(cfg.stem.width);
    for s in &cfg.stages {
        let w = u64::from(s.width);
        let wb = (f64::from(s.width) * s.bottleneck_multiplier).round() as u64;
        let k = u64::from(s.kernel);
        let g = u64::from(s.groups);
        let d = u64::from(s.dilation);
        for b in 0..s.depth {
            let input = block_input(s, b, prev);
            let stride = if b == 0 { u64::from(s.stride) } else { 1 };
            total += h * h * input * wb;
            let h2 = conv_out(h, k, stride, d * (k - 1) / 2, d);
            total += h2 * h2 * k * k * (wb / g) * wb;
            if s.se.enabled {
                let base = match s.se.base {
                    SeBase::BlockInput => input,
                    SeBase::Inner => wb,
                };
                let hidden = ((base as f64 * s.se.ratio).round() as u64).max(1);
                total += wb * hidden + hidden * wb;
            }
            total += h2 * h2 * wb * w;
            if input != w || stride != 1 {
                total += h2 * h2 * input * w;
            }
            h = h2;
        }
        prev = w;
    }

    total += prev * u64::from(cfg.num_classes);
    total
}

/// Asserts an exact count against a reference total given in millions
/// rounded to two decimals (tolerance ±0.005M).
pub fn assert_close_m(actual: u64, reference_m: f64) {
    let target = reference_m * 1e6;
    let diff = (actual as f64 - target).abs();
    assert!(
        diff <= 5_000.0 + 1e-6,
        "count {actual} is {diff:.0} away from reference {reference_m}M"
    );
}

/// Asserts an exact count within a relative tolerance of a reference total
/// given in millions.
pub fn assert_close_m_rel(actual: u64, reference_m: f64, rel: f64) {
    let target = reference_m * 1e6;
    let diff = (actual as f64 - target).abs();
    assert!(
        diff <= rel * target,
        "count {actual} deviates from reference {reference_m}M by {:.3}% (> {:.3}%)",
        100.0 * diff / target,
        100.0 * rel
    );
}
