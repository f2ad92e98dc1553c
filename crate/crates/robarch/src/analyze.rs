//! Parameter and MAC accounting.
//!
//! Counts are exact integers derived from the canonical layer plan. The
//! conventions:
//!
//! - Convolutions are never biased and cost `k^2 * (c_in / g) * c_out`
//!   parameters; their MACs are that figure times the output spatial area.
//! - Batch norms cost `2c` (scale and shift; running statistics are state,
//!   not parameters) and zero MACs; instance norms are affine-free.
//! - SE blocks use biased fully-connected layers evaluated at 1x1.
//! - The head pool is free; the head linear costs `c_in * classes (+ bias)`
//!   parameters and `c_in * classes` MACs.
//! - Activations contribute their per-layer scalars (zero MACs).
//!
//! MAC counts are per sample and require an input resolution divisible by the
//! network's total downsampling factor.

use serde::Serialize;

use crate::config::ArchConfig;
use crate::error::Result;
use crate::plan::{build_plan, BlockPlan, NetPlan};

/// Exact parameter counts, broken down by top-level section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub total: u64,
    pub stem: u64,
    pub stages: Vec<u64>,
    pub head: u64,
}

/// Exact multiply-accumulate counts for one sample at a given resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MacReport {
    pub resolution: u32,
    pub total: u64,
    pub stem: u64,
    pub stages: Vec<u64>,
    pub head: u64,
}

/// One row of the per-layer table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub kind: String,
    pub in_channels: u32,
    pub out_channels: u32,
    /// Square output spatial size after this layer.
    pub out_size: u32,
    pub params: u64,
    pub macs: u64,
}

fn block_params(b: &BlockPlan) -> u64 {
    let mut p = b.conv1.params() + b.conv2.params() + b.conv3.params();
    for n in [&b.norm1, &b.norm2, &b.norm3].into_iter().flatten() {
        p += n.params();
    }
    for a in [&b.act1, &b.act2, &b.act3].into_iter().flatten() {
        p += a.params();
    }
    if let Some(se) = &b.se {
        p += se.fc1.params() + se.act.params() + se.fc2.params();
    }
    if let Some((conv, norm)) = &b.proj {
        p += conv.params() + norm.params();
    }
    p
}

/// Counts the exact number of trainable parameters.
pub fn count_params(cfg: &ArchConfig) -> ParamReport {
    let plan = build_plan(cfg);
    let stem =
        plan.stem_conv.params() + plan.stem_norm.params() + plan.stem_act.params();
    let stages: Vec<u64> = plan
        .stages
        .iter()
        .map(|s| s.blocks.iter().map(block_params).sum())
        .collect();
    let head = plan.head_fc.params();
    ParamReport {
        total: stem + stages.iter().sum::<u64>() + head,
        stem,
        stages,
        head,
    }
}

/// Counts exact per-sample MACs at a square input resolution.
///
/// Fails when the resolution is not divisible by the network's total
/// downsampling factor, since the spatial sizes would otherwise not reduce
/// cleanly to 1 by the head.
pub fn count_macs(cfg: &ArchConfig, resolution: u32) -> Result<MacReport> {
    let plan = build_plan(cfg);
    plan.check_resolution(cfg, resolution)?;

    let stem_out = plan.stem_conv.out_size(resolution);
    let stem = plan.stem_conv.macs(stem_out, stem_out);
    let mut cur = plan.stem_out_size(resolution);

    let mut stages = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let mut macs = 0u64;
        for b in &stage.blocks {
            let mid = b.conv2.out_size(cur);
            macs += b.conv1.macs(cur, cur);
            macs += b.conv2.macs(mid, mid);
            macs += b.conv3.macs(mid, mid);
            if let Some(se) = &b.se {
                macs += se.fc1.macs() + se.fc2.macs();
            }
            if let Some((conv, _)) = &b.proj {
                macs += conv.macs(mid, mid);
            }
            cur = mid;
        }
        stages.push(macs);
    }

    let head = plan.head_fc.macs();
    Ok(MacReport {
        resolution,
        total: stem + stages.iter().sum::<u64>() + head,
        stem,
        stages,
        head,
    })
}

fn push_block_rows(rows: &mut Vec<LayerRow>, b: &BlockPlan, in_size: u32) -> u32 {
    let mid = b.conv2.out_size(in_size);
    rows.push(LayerRow {
        name: b.conv1.name.clone(),
        kind: "conv".into(),
        in_channels: b.conv1.in_ch,
        out_channels: b.conv1.out_ch,
        out_size: in_size,
        params: b.conv1.params(),
        macs: b.conv1.macs(in_size, in_size),
    });
    if let Some(n) = &b.norm1 {
        rows.push(LayerRow {
            name: n.name.clone(),
            kind: "norm".into(),
            in_channels: n.channels,
            out_channels: n.channels,
            out_size: in_size,
            params: n.params(),
            macs: 0,
        });
    }
    if let Some(a) = &b.act1 {
        rows.push(LayerRow {
            name: a.name.clone(),
            kind: "act".into(),
            in_channels: b.conv1.out_ch,
            out_channels: b.conv1.out_ch,
            out_size: in_size,
            params: a.params(),
            macs: 0,
        });
    }
    rows.push(LayerRow {
        name: b.conv2.name.clone(),
        kind: "conv".into(),
        in_channels: b.conv2.in_ch,
        out_channels: b.conv2.out_ch,
        out_size: mid,
        params: b.conv2.params(),
        macs: b.conv2.macs(mid, mid),
    });
    if let Some(n) = &b.norm2 {
        rows.push(LayerRow {
            name: n.name.clone(),
            kind: "norm".into(),
            in_channels: n.channels,
            out_channels: n.channels,
            out_size: mid,
            params: n.params(),
            macs: 0,
        });
    }
    if let Some(a) = &b.act2 {
        rows.push(LayerRow {
            name: a.name.clone(),
            kind: "act".into(),
            in_channels: b.conv2.out_ch,
            out_channels: b.conv2.out_ch,
            out_size: mid,
            params: a.params(),
            macs: 0,
        });
    }
    if let Some(se) = &b.se {
        rows.push(LayerRow {
            name: se.fc1.name.clone(),
            kind: "linear".into(),
            in_channels: se.fc1.in_features,
            out_channels: se.fc1.out_features,
            out_size: 1,
            params: se.fc1.params(),
            macs: se.fc1.macs(),
        });
        rows.push(LayerRow {
            name: se.act.name.clone(),
            kind: "act".into(),
            in_channels: se.fc1.out_features,
            out_channels: se.fc1.out_features,
            out_size: 1,
            params: se.act.params(),
            macs: 0,
        });
        rows.push(LayerRow {
            name: se.fc2.name.clone(),
            kind: "linear".into(),
            in_channels: se.fc2.in_features,
            out_channels: se.fc2.out_features,
            out_size: 1,
            params: se.fc2.params(),
            macs: se.fc2.macs(),
        });
    }
    rows.push(LayerRow {
        name: b.conv3.name.clone(),
        kind: "conv".into(),
        in_channels: b.conv3.in_ch,
        out_channels: b.conv3.out_ch,
        out_size: mid,
        params: b.conv3.params(),
        macs: b.conv3.macs(mid, mid),
    });
    if let Some(n) = &b.norm3 {
        rows.push(LayerRow {
            name: n.name.clone(),
            kind: "norm".into(),
            in_channels: n.channels,
            out_channels: n.channels,
            out_size: mid,
            params: n.params(),
            macs: 0,
        });
    }
    if let Some((conv, norm)) = &b.proj {
        rows.push(LayerRow {
            name: conv.name.clone(),
            kind: "conv".into(),
            in_channels: conv.in_ch,
            out_channels: conv.out_ch,
            out_size: mid,
            params: conv.params(),
            macs: conv.macs(mid, mid),
        });
        rows.push(LayerRow {
            name: norm.name.clone(),
            kind: "norm".into(),
            in_channels: norm.channels,
            out_channels: norm.channels,
            out_size: mid,
            params: norm.params(),
            macs: 0,
        });
    }
    if let Some(a) = &b.act3 {
        rows.push(LayerRow {
            name: a.name.clone(),
            kind: "act".into(),
            in_channels: b.out_ch,
            out_channels: b.out_ch,
            out_size: mid,
            params: a.params(),
            macs: 0,
        });
    }
    mid
}

/// Produces the per-layer table: every layer in canonical order with its
/// channel counts, output spatial size, parameters, and MACs.
///
/// Row sums agree exactly with [`count_params`] and [`count_macs`].
pub fn layer_table(cfg: &ArchConfig, resolution: u32) -> Result<Vec<LayerRow>> {
    let plan = build_plan(cfg);
    plan.check_resolution(cfg, resolution)?;

    let mut rows = Vec::new();
    let stem_out = plan.stem_conv.out_size(resolution);
    rows.push(LayerRow {
        name: plan.stem_conv.name.clone(),
        kind: "conv".into(),
        in_channels: plan.stem_conv.in_ch,
        out_channels: plan.stem_conv.out_ch,
        out_size: stem_out,
        params: plan.stem_conv.params(),
        macs: plan.stem_conv.macs(stem_out, stem_out),
    });
    rows.push(LayerRow {
        name: plan.stem_norm.name.clone(),
        kind: "norm".into(),
        in_channels: plan.stem_norm.channels,
        out_channels: plan.stem_norm.channels,
        out_size: stem_out,
        params: plan.stem_norm.params(),
        macs: 0,
    });
    rows.push(LayerRow {
        name: plan.stem_act.name.clone(),
        kind: "act".into(),
        in_channels: plan.stem_conv.out_ch,
        out_channels: plan.stem_conv.out_ch,
        out_size: stem_out,
        params: plan.stem_act.params(),
        macs: 0,
    });
    let mut cur = plan.stem_out_size(resolution);
    if plan.stem_pool {
        rows.push(LayerRow {
            name: "stem.pool".into(),
            kind: "maxpool".into(),
            in_channels: plan.stem_conv.out_ch,
            out_channels: plan.stem_conv.out_ch,
            out_size: cur,
            params: 0,
            macs: 0,
        });
    }

    for stage in &plan.stages {
        for b in &stage.blocks {
            cur = push_block_rows(&mut rows, b, cur);
        }
    }

    rows.push(LayerRow {
        name: "head.pool".into(),
        kind: "avgpool".into(),
        in_channels: plan.head_fc.in_features,
        out_channels: plan.head_fc.in_features,
        out_size: 1,
        params: 0,
        macs: 0,
    });
    rows.push(LayerRow {
        name: plan.head_fc.name.clone(),
        kind: "linear".into(),
        in_channels: plan.head_fc.in_features,
        out_channels: plan.head_fc.out_features,
        out_size: 1,
        params: plan.head_fc.params(),
        macs: plan.head_fc.macs(),
    });
    Ok(rows)
}

/// Convenience wrapper exposing the full plan alongside the counts.
pub fn plan_for(cfg: &ArchConfig) -> NetPlan {
    build_plan(cfg)
}
