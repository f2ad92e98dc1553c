//! Canonical layer plan.
//!
//! [`NetPlan`] expands an [`ArchConfig`] into the exact sequence of concrete
//! layers that realize it: the stem, every bottleneck block (pointwise conv →
//! grouped conv → optional SE → pointwise conv, with per-block norm/activation
//! patterns, dense connectivity, and projection shortcuts), and the head.
//!
//! The analyzer counts parameters and MACs from this plan, and the engine
//! instantiates weights for it, so the two can never disagree about what a
//! configuration contains.

use crate::config::{ActKind, ArchConfig, DenseMode, NormKind, StemKind};
use crate::error::{Error, Result};

/// A convolution layer (never biased: every conv is followed by a norm or
/// feeds a residual sum whose scale is normalized downstream).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvDesc {
    pub name: String,
    pub in_ch: u32,
    pub out_ch: u32,
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
    pub dilation: u32,
    pub groups: u32,
}

impl ConvDesc {
    pub fn params(&self) -> u64 {
        u64::from(self.kernel) * u64::from(self.kernel) * u64::from(self.in_ch / self.groups)
            * u64::from(self.out_ch)
    }

    /// MACs for one sample at the given output spatial size.
    pub fn macs(&self, out_h: u32, out_w: u32) -> u64 {
        u64::from(out_h) * u64::from(out_w) * self.params()
    }

    /// Output spatial size for a given input size.
    pub fn out_size(&self, h: u32) -> u32 {
        (h + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }
}

/// A normalization layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormDesc {
    pub name: String,
    pub kind: NormKind,
    pub channels: u32,
}

impl NormDesc {
    pub fn params(&self) -> u64 {
        match self.kind {
            NormKind::BatchNorm => 2 * u64::from(self.channels),
            NormKind::InstanceNorm => 0,
        }
    }
}

/// An activation layer (parametric kinds carry per-layer scalars).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActDesc {
    pub name: String,
    pub kind: ActKind,
}

impl ActDesc {
    pub fn params(&self) -> u64 {
        self.kind.param_count()
    }
}

/// A fully-connected layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearDesc {
    pub name: String,
    pub in_features: u32,
    pub out_features: u32,
    pub bias: bool,
}

impl LinearDesc {
    pub fn params(&self) -> u64 {
        let w = u64::from(self.in_features) * u64::from(self.out_features);
        w + if self.bias {
            u64::from(self.out_features)
        } else {
            0
        }
    }

    /// MACs for one sample (bias excluded, matching common practice).
    pub fn macs(&self) -> u64 {
        u64::from(self.in_features) * u64::from(self.out_features)
    }
}

/// Squeeze-and-excitation sub-block: global pool → fc1 → activation → fc2 →
/// sigmoid → channel scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SePlan {
    pub fc1: LinearDesc,
    pub act: ActDesc,
    pub fc2: LinearDesc,
}

/// One bottleneck block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    /// Channels entering the block (after dense combination).
    pub in_ch: u32,
    /// Channels leaving the block (the stage width).
    pub out_ch: u32,
    pub conv1: ConvDesc,
    pub norm1: Option<NormDesc>,
    pub act1: Option<ActDesc>,
    pub conv2: ConvDesc,
    pub norm2: Option<NormDesc>,
    pub act2: Option<ActDesc>,
    pub se: Option<SePlan>,
    pub conv3: ConvDesc,
    pub norm3: Option<NormDesc>,
    /// Projection shortcut (1x1 conv + norm), present iff the block input
    /// channels differ from the output channels or the stride is not 1.
    pub proj: Option<(ConvDesc, NormDesc)>,
    pub act3: Option<ActDesc>,
    /// How many preceding block outputs feed this block (1 = plain).
    pub dense_in: u32,
    pub dense_mode: DenseMode,
    pub stride: u32,
}

/// One body stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub blocks: Vec<BlockPlan>,
}

/// The whole network, expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPlan {
    pub stem_conv: ConvDesc,
    pub stem_norm: NormDesc,
    pub stem_act: ActDesc,
    /// 3x3/stride-2/pad-1 max pool, present only for conv_maxpool stems.
    pub stem_pool: bool,
    pub stages: Vec<StagePlan>,
    pub head_fc: LinearDesc,
}

/// Expands a validated config into its canonical layer plan.
pub fn build_plan(cfg: &ArchConfig) -> NetPlan {
    let stem_stride = match cfg.stem.kind {
        StemKind::Patchify => cfg.stem.patch_stride.expect("validated patchify stem"),
        _ => 2,
    };
    let stem_padding = match cfg.stem.kind {
        StemKind::Patchify => 0,
        _ => (cfg.stem.kernel - 1) / 2,
    };
    let stem_conv = ConvDesc {
        name: "stem.conv".to_string(),
        in_ch: cfg.input_channels,
        out_ch: cfg.stem.width,
        kernel: cfg.stem.kernel,
        stride: stem_stride,
        padding: stem_padding,
        dilation: 1,
        groups: 1,
    };
    // The stem's norm and activation kinds follow stage 1.
    let s1 = &cfg.stages[0];
    let stem_norm = NormDesc {
        name: "stem.norm".to_string(),
        kind: s1.norm.kind,
        channels: cfg.stem.width,
    };
    let stem_act = ActDesc {
        name: "stem.act".to_string(),
        kind: s1.activation.kind,
    };

    let mut stages = Vec::with_capacity(cfg.stages.len());
    let mut in_ch = cfg.stem.width;
    for (si, stage) in cfg.stages.iter().enumerate() {
        let wb = stage.inner_width();
        let mut blocks = Vec::with_capacity(stage.depth as usize);
        for bi in 0..stage.depth {
            let prefix = format!("s{}.b{}", si + 1, bi + 1);
            let stride = if bi == 0 { stage.stride } else { 1 };
            // Dense connectivity: block j >= 1 combines the last
            // min(dense_ratio, j) block outputs; block 0 always consumes the
            // stage input alone.
            let dense_in = if bi == 0 {
                1
            } else {
                stage.dense_ratio.min(bi)
            };
            let block_in = if bi == 0 {
                in_ch
            } else {
                match stage.dense_mode {
                    DenseMode::Sum => stage.width,
                    DenseMode::Concat => stage.width * dense_in,
                }
            };
            let norm = |idx: usize, ch: u32| {
                stage.norm.pattern[idx].then(|| NormDesc {
                    name: format!("{prefix}.norm{}", idx + 1),
                    kind: stage.norm.kind,
                    channels: ch,
                })
            };
            let act = |idx: usize| {
                stage.activation.pattern[idx].then(|| ActDesc {
                    name: format!("{prefix}.act{}", idx + 1),
                    kind: stage.activation.kind,
                })
            };
            let se = stage.se.enabled.then(|| {
                let hidden = stage.se_hidden_width(block_in);
                SePlan {
                    fc1: LinearDesc {
                        name: format!("{prefix}.se.fc1"),
                        in_features: wb,
                        out_features: hidden,
                        bias: true,
                    },
                    act: ActDesc {
                        name: format!("{prefix}.se.act"),
                        kind: stage.se.activation,
                    },
                    fc2: LinearDesc {
                        name: format!("{prefix}.se.fc2"),
                        in_features: hidden,
                        out_features: wb,
                        bias: true,
                    },
                }
            });
            let proj = (block_in != stage.width || stride != 1).then(|| {
                (
                    ConvDesc {
                        name: format!("{prefix}.proj.conv"),
                        in_ch: block_in,
                        out_ch: stage.width,
                        kernel: 1,
                        stride,
                        padding: 0,
                        dilation: 1,
                        groups: 1,
                    },
                    // Projection shortcuts keep an affine batch norm even
                    // under instance-norm stages; only main-path norms follow
                    // the configured kind.
                    NormDesc {
                        name: format!("{prefix}.proj.norm"),
                        kind: NormKind::BatchNorm,
                        channels: stage.width,
                    },
                )
            });
            blocks.push(BlockPlan {
                in_ch: block_in,
                out_ch: stage.width,
                conv1: ConvDesc {
                    name: format!("{prefix}.conv1"),
                    in_ch: block_in,
                    out_ch: wb,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    dilation: 1,
                    groups: 1,
                },
                norm1: norm(0, wb),
                act1: act(0),
                conv2: ConvDesc {
                    name: format!("{prefix}.conv2"),
                    in_ch: wb,
                    out_ch: wb,
                    kernel: stage.kernel,
                    stride,
                    padding: stage.dilation * (stage.kernel - 1) / 2,
                    dilation: stage.dilation,
                    groups: stage.groups,
                },
                norm2: norm(1, wb),
                act2: act(1),
                se,
                conv3: ConvDesc {
                    name: format!("{prefix}.conv3"),
                    in_ch: wb,
                    out_ch: stage.width,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    dilation: 1,
                    groups: 1,
                },
                norm3: norm(2, stage.width),
                proj,
                act3: act(2),
                dense_in,
                dense_mode: stage.dense_mode,
                stride,
            });
        }
        stages.push(StagePlan { blocks });
        in_ch = stage.width;
    }

    NetPlan {
        stem_conv,
        stem_norm,
        stem_act,
        stem_pool: cfg.stem.kind == StemKind::ConvMaxpool,
        stages,
        head_fc: LinearDesc {
            name: "head.fc".to_string(),
            in_features: in_ch,
            out_features: cfg.num_classes,
            bias: cfg.head.bias,
        },
    }
}

impl NetPlan {
    /// Spatial size after the stem for a square input of the given size.
    pub fn stem_out_size(&self, resolution: u32) -> u32 {
        let after_conv = self.stem_conv.out_size(resolution);
        if self.stem_pool {
            // 3x3 / stride-2 / pad-1 max pool.
            (after_conv + 2 - 3) / 2 + 1
        } else {
            after_conv
        }
    }

    /// Checks the MAC-counting precondition that the resolution is divisible
    /// by the network's total downsampling factor.
    pub fn check_resolution(&self, cfg: &ArchConfig, resolution: u32) -> Result<()> {
        let factor = cfg.downsampling_factor();
        if factor == 0 || resolution % factor != 0 {
            return Err(Error::Invalid(format!(
                "resolution {resolution} not divisible by downsampling factor {factor}"
            )));
        }
        Ok(())
    }
}
