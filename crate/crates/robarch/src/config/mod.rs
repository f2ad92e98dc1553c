//! Architecture configuration data model.
//!
//! An [`ArchConfig`] declaratively describes a ResNet-style network as a stem,
//! an ordered list of body stages, and a classification head. Every knob the
//! toolkit studies lives here: per-stage depth/width vectors, bottleneck
//! multipliers, group counts, kernel sizes, dilation, dense connectivity,
//! squeeze-and-excitation, activation kinds/patterns, and normalization
//! kinds/patterns.
//!
//! Documents are JSON with the canonical field set below; omitted fields take
//! documented defaults chosen so that a minimal document (depths only)
//! resolves to the classic ResNet-50 baseline. [`emit_config`] produces a
//! fully-explicit canonical document such that `parse(emit(c)) == c` and two
//! emissions of the same config are byte-identical.

mod presets;

pub use presets::{preset, preset_names};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full declarative description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Human-readable label; not part of the structural identity.
    pub name: String,
    pub num_classes: u32,
    pub input_channels: u32,
    pub stem: StemConfig,
    pub stages: Vec<StageConfig>,
    pub head: HeadConfig,
}

/// Stem (input) stage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemConfig {
    pub kind: StemKind,
    pub width: u32,
    /// Conv kinds: odd kernel with stride 2 and padding `(kernel-1)/2`.
    /// Patchify: `kernel == stride == patch_stride`.
    pub kernel: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_stride: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// Classic stem: stride-2 conv followed by a 3x3/stride-2/pad-1 max-pool.
    ConvMaxpool,
    /// Stride-2 conv only; the downsampling moves down into stage 1, whose
    /// first block must use stride 2.
    ConvStageDownsample,
    /// Stride-2 conv with neither a pool nor a moved-down stride.
    ConvNopool,
    /// Non-overlapping patch embedding: kernel = stride = `patch_stride`.
    Patchify,
}

/// One body stage: `depth` residual bottleneck blocks at pointwise width
/// `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub depth: u32,
    /// Pointwise (block output) channel count `w_i`.
    pub width: u32,
    /// `b_i`: inner width is `round(width * bottleneck_multiplier)`.
    pub bottleneck_multiplier: f64,
    /// Group count of the non-pointwise convolution.
    pub groups: u32,
    /// Kernel size of the non-pointwise convolution (odd).
    pub kernel: u32,
    pub dilation: u32,
    /// Stride of the first block's non-pointwise conv (1 or 2).
    pub stride: u32,
    /// Each block combines the last `dense_ratio` block outputs as its input;
    /// 1 means plain sequential connectivity.
    pub dense_ratio: u32,
    pub dense_mode: DenseMode,
    pub se: SeConfig,
    pub activation: ActivationSpec,
    pub norm: NormSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseMode {
    /// Sum the combined inputs (parameter-neutral).
    Sum,
    /// Concatenate along channels (changes parameter counts).
    Concat,
}

/// Squeeze-and-excitation sub-block configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeConfig {
    pub enabled: bool,
    /// Hidden width = `max(1, round(ratio * base width))`.
    pub ratio: f64,
    pub base: SeBase,
    pub activation: ActKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeBase {
    /// Hidden width derives from the block's input channel count.
    BlockInput,
    /// Hidden width derives from the block's inner width.
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActKind,
    /// Presence of each of the three per-block activation layers.
    pub pattern: [bool; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    Gelu,
    Silu,
    /// Parametric ReLU with one learnable scalar per layer.
    Prelu,
    /// Parametric SiLU `x * sigmoid(a*x)`, one learnable scalar per layer.
    Psilu,
    /// Parametric shifted SiLU `x * (sigmoid(a*x) - b) / (1 - b)`, two
    /// learnable scalars per layer.
    Pssilu,
}

impl ActKind {
    /// Learnable scalars carried by one activation layer of this kind.
    pub fn param_count(self) -> u64 {
        match self {
            ActKind::Relu | ActKind::Gelu | ActKind::Silu => 0,
            ActKind::Prelu | ActKind::Psilu => 1,
            ActKind::Pssilu => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    /// Presence of each of the three per-block main-path norm layers.
    pub pattern: [bool; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Affine batch norm: 2 learnable parameters per channel.
    BatchNorm,
    /// Affine-free instance norm: no learnable parameters.
    InstanceNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub pooling: Pooling,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    GlobalAverage,
}

/// Derived per-stage width quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedWidths {
    pub stages: Vec<StageWidths>,
    /// Expansion ratios `e_i = w_{i+1} / w_i` (length `n - 1`).
    pub expansions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageWidths {
    /// Inner width `w_b = round(w * b)`.
    pub inner_width: u32,
    /// Group width `w_g = w_b / g`.
    pub group_width: f64,
}

impl StageConfig {
    /// Inner (non-pointwise) width `w_b = round(w * b)`, rounding half away
    /// from zero.
    pub fn inner_width(&self) -> u32 {
        (self.width as f64 * self.bottleneck_multiplier).round() as u32
    }

    /// SE hidden width under this stage's SE settings for a block whose input
    /// channel count is `block_input`.
    pub fn se_hidden_width(&self, block_input: u32) -> u32 {
        let base = match self.se.base {
            SeBase::BlockInput => block_input,
            SeBase::Inner => self.inner_width(),
        };
        ((self.se.ratio * base as f64).round() as u32).max(1)
    }
}

impl ArchConfig {
    /// Number of body stages.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Total spatial downsampling factor from input to head pooling.
    pub fn downsampling_factor(&self) -> u32 {
        let stem = match self.stem.kind {
            StemKind::ConvMaxpool => 4,
            StemKind::ConvStageDownsample | StemKind::ConvNopool => 2,
            StemKind::Patchify => self.stem.patch_stride.unwrap_or(1),
        };
        stem * self.stages.iter().map(|s| s.stride).product::<u32>()
    }

    /// Per-stage depth vector.
    pub fn depths(&self) -> Vec<u32> {
        self.stages.iter().map(|s| s.depth).collect()
    }

    /// Per-stage width vector.
    pub fn widths(&self) -> Vec<u32> {
        self.stages.iter().map(|s| s.width).collect()
    }

    /// Returns a copy with the given name.
    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// Returns a copy with the given per-stage depths (length must match).
    pub fn with_depths(mut self, depths: &[u32]) -> Self {
        assert_eq!(depths.len(), self.stages.len(), "depth vector length");
        for (s, &d) in self.stages.iter_mut().zip(depths) {
            s.depth = d;
        }
        self
    }

    /// Returns a copy with the given per-stage widths (length must match).
    pub fn with_widths(mut self, widths: &[u32]) -> Self {
        assert_eq!(widths.len(), self.stages.len(), "width vector length");
        for (s, &w) in self.stages.iter_mut().zip(widths) {
            s.width = w;
        }
        self
    }
}

/// Default width profile by stage position (the ResNet-50 profile, reusing
/// its first three widths for 3-stage networks and repeating the final width
/// for 5- and 6-stage networks).
pub fn default_widths(n: usize) -> Vec<u32> {
    const BASE: [u32; 6] = [256, 512, 1024, 2048, 2048, 2048];
    BASE[..n.min(6)].to_vec()
}

/// Raw document forms: every field optional so that omitted fields take the
/// documented defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchConfig {
    name: Option<String>,
    num_classes: Option<u32>,
    input_channels: Option<u32>,
    stem: Option<RawStemConfig>,
    stages: Vec<RawStageConfig>,
    head: Option<RawHeadConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStemConfig {
    kind: Option<StemKind>,
    width: Option<u32>,
    kernel: Option<u32>,
    patch_stride: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStageConfig {
    depth: u32,
    width: Option<u32>,
    bottleneck_multiplier: Option<f64>,
    groups: Option<u32>,
    kernel: Option<u32>,
    dilation: Option<u32>,
    stride: Option<u32>,
    dense_ratio: Option<u32>,
    dense_mode: Option<DenseMode>,
    se: Option<RawSeConfig>,
    activation: Option<RawActivationSpec>,
    norm: Option<RawNormSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeConfig {
    enabled: Option<bool>,
    ratio: Option<f64>,
    base: Option<SeBase>,
    activation: Option<ActKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActivationSpec {
    kind: Option<ActKind>,
    pattern: Option<[bool; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNormSpec {
    kind: Option<NormKind>,
    pattern: Option<[bool; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeadConfig {
    pooling: Option<Pooling>,
    bias: Option<bool>,
}

impl RawArchConfig {
    fn resolve(self) -> ArchConfig {
        let n = self.stages.len();
        let widths = default_widths(n.max(3));
        let raw_stem = self.stem.unwrap_or_default();
        let stem_kind = raw_stem.kind.unwrap_or(StemKind::ConvMaxpool);
        let stem = StemConfig {
            kind: stem_kind,
            width: raw_stem.width.unwrap_or(64),
            kernel: raw_stem.kernel.unwrap_or(match stem_kind {
                StemKind::Patchify => raw_stem.patch_stride.unwrap_or(4),
                _ => 7,
            }),
            patch_stride: match stem_kind {
                StemKind::Patchify => Some(raw_stem.patch_stride.unwrap_or(4)),
                _ => raw_stem.patch_stride,
            },
        };
        let stages = self
            .stages
            .into_iter()
            .enumerate()
            .map(|(i, raw)| {
                let default_stride = if i == 0 {
                    // A conv_stage_downsample stem moves the stem pool's
                    // downsampling into stage 1's first block.
                    if stem.kind == StemKind::ConvStageDownsample {
                        2
                    } else {
                        1
                    }
                } else {
                    2
                };
                let se = raw.se.unwrap_or_default();
                let act = raw.activation.unwrap_or_default();
                let norm = raw.norm.unwrap_or_default();
                StageConfig {
                    depth: raw.depth,
                    width: raw.width.unwrap_or_else(|| {
                        widths.get(i).copied().unwrap_or(2048)
                    }),
                    bottleneck_multiplier: raw.bottleneck_multiplier.unwrap_or(0.25),
                    groups: raw.groups.unwrap_or(1),
                    kernel: raw.kernel.unwrap_or(3),
                    dilation: raw.dilation.unwrap_or(1),
                    stride: raw.stride.unwrap_or(default_stride),
                    dense_ratio: raw.dense_ratio.unwrap_or(1),
                    dense_mode: raw.dense_mode.unwrap_or(DenseMode::Sum),
                    se: SeConfig {
                        enabled: se.enabled.unwrap_or(false),
                        ratio: se.ratio.unwrap_or(0.25),
                        base: se.base.unwrap_or(SeBase::BlockInput),
                        activation: se.activation.unwrap_or(ActKind::Relu),
                    },
                    activation: ActivationSpec {
                        kind: act.kind.unwrap_or(ActKind::Relu),
                        pattern: act.pattern.unwrap_or([true; 3]),
                    },
                    norm: NormSpec {
                        kind: norm.kind.unwrap_or(NormKind::BatchNorm),
                        pattern: norm.pattern.unwrap_or([true; 3]),
                    },
                }
            })
            .collect();
        let head = self.head.unwrap_or_default();
        ArchConfig {
            name: self.name.unwrap_or_else(|| "unnamed".to_string()),
            num_classes: self.num_classes.unwrap_or(1000),
            input_channels: self.input_channels.unwrap_or(3),
            stem,
            stages,
            head: HeadConfig {
                pooling: head.pooling.unwrap_or(Pooling::GlobalAverage),
                bias: head.bias.unwrap_or(true),
            },
        }
    }
}

/// Parses a canonical config document, applying documented defaults, and
/// validates all invariants.
pub fn parse_config(text: &str) -> Result<ArchConfig> {
    let raw: RawArchConfig =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let cfg = raw.resolve();
    validate(&cfg)?;
    Ok(cfg)
}

/// Emits the canonical, fully-explicit document for a config. Two emissions
/// of the same config are byte-identical and `parse(emit(c)) == c`.
pub fn emit_config(cfg: &ArchConfig) -> String {
    let mut text = serde_json::to_string_pretty(cfg).expect("config serialization");
    text.push('\n');
    text
}

/// Checks every configuration invariant, naming the violated rule and field
/// path in the error.
pub fn validate(cfg: &ArchConfig) -> Result<()> {
    let fail = |msg: String| Err(Error::InvalidConfig(msg));
    let n = cfg.stages.len();
    if !(3..=6).contains(&n) {
        return fail(format!("stages: stage count out of range [3,6] (got {n})"));
    }
    if cfg.num_classes == 0 {
        return fail("num_classes: must be positive".into());
    }
    if cfg.input_channels == 0 {
        return fail("input_channels: must be positive".into());
    }
    if cfg.stem.width == 0 {
        return fail("stem.width: must be positive".into());
    }
    match cfg.stem.kind {
        StemKind::Patchify => {
            let p = match cfg.stem.patch_stride {
                Some(p) => p,
                None => return fail("stem.patch_stride: required for patchify stems".into()),
            };
            if !(p == 2 || p == 4) {
                return fail(format!("stem.patch_stride: must be 2 or 4 (got {p})"));
            }
            if cfg.stem.kernel != p {
                return fail(format!(
                    "stem.kernel: patchify requires kernel = stride = patch_stride \
                     (kernel {} vs patch_stride {p})",
                    cfg.stem.kernel
                ));
            }
        }
        _ => {
            if cfg.stem.kernel % 2 == 0 {
                return fail(format!(
                    "stem.kernel: conv stems require an odd kernel (got {})",
                    cfg.stem.kernel
                ));
            }
            if cfg.stem.patch_stride.is_some() {
                return fail("stem.patch_stride: only valid for patchify stems".into());
            }
        }
    }
    if cfg.stem.kind == StemKind::ConvStageDownsample && cfg.stages[0].stride != 2 {
        return fail(
            "stages[0].stride: conv_stage_downsample stems move the downsampling \
             into stage 1, whose first block must have stride 2"
                .into(),
        );
    }
    for (i, s) in cfg.stages.iter().enumerate() {
        let path = |field: &str| format!("stages[{i}].{field}");
        if s.depth == 0 {
            return fail(format!("{}: must be positive", path("depth")));
        }
        if s.width == 0 {
            return fail(format!("{}: must be positive", path("width")));
        }
        if !(s.bottleneck_multiplier > 0.0) {
            return fail(format!("{}: must be positive", path("bottleneck_multiplier")));
        }
        if s.groups == 0 {
            return fail(format!("{}: must be positive", path("groups")));
        }
        if s.kernel == 0 || s.kernel % 2 == 0 {
            return fail(format!("{}: must be a positive odd integer", path("kernel")));
        }
        if s.dilation == 0 {
            return fail(format!("{}: must be positive", path("dilation")));
        }
        if !(s.stride == 1 || s.stride == 2) {
            return fail(format!("{}: must be 1 or 2", path("stride")));
        }
        if s.dense_ratio == 0 {
            return fail(format!("{}: must be positive", path("dense_ratio")));
        }
        if s.dense_ratio > s.depth {
            return fail(format!(
                "{}: dense_ratio {} exceeds stage depth {}",
                path("dense_ratio"),
                s.dense_ratio,
                s.depth
            ));
        }
        if !(s.se.ratio > 0.0 && s.se.ratio <= 1.0) {
            return fail(format!("{}: must lie in (0, 1]", path("se.ratio")));
        }
        let wb = s.inner_width();
        if wb == 0 {
            return fail(format!(
                "{}: inner width round({} * {}) must be positive",
                path("bottleneck_multiplier"),
                s.width,
                s.bottleneck_multiplier
            ));
        }
        if wb % s.groups != 0 {
            return fail(format!(
                "{}: inner width {wb} not divisible by groups {}",
                path("groups"),
                s.groups
            ));
        }
    }
    Ok(())
}

/// Computes per-stage derived width quantities.
pub fn derive_quantities(cfg: &ArchConfig) -> DerivedWidths {
    let stages = cfg
        .stages
        .iter()
        .map(|s| {
            let wb = s.inner_width();
            StageWidths {
                inner_width: wb,
                group_width: wb as f64 / s.groups as f64,
            }
        })
        .collect();
    let expansions = cfg
        .stages
        .windows(2)
        .map(|w| w[1].width as f64 / w[0].width as f64)
        .collect();
    DerivedWidths { stages, expansions }
}
