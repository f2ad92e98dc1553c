//! Design-rule linter.
//!
//! Eighteen robustness-oriented design rules are encoded as machine-checkable
//! predicates and advisories over an [`ArchConfig`]. Each finding cites its
//! rule sentence from the catalog shipped in `docs/guidelines.md` (also
//! embedded as [`GUIDELINE_DOC`]), so reports are self-explanatory.
//!
//! Rules that name concrete configuration properties (stage count, depth
//! ordering, bottleneck ratio, stem kind, dense connections, dilation,
//! activations, SE, normalization) resolve to satisfied/violated; rules that
//! describe procedures or scaling tendencies are reported as advisories
//! rather than hard pass/fail.

use serde::Serialize;

use crate::config::{ActKind, ArchConfig, NormKind, StemKind};

/// The rule catalog. Index `i` holds the sentence for rule `i + 1`.
pub const GUIDELINE_CATALOG: [&str; 18] = [
    "3-stage ≈ 4-stage > 5-stage ≫ 6-stage network in terms of robustness.",
    "For a 4-stage network, set d1 < d2 < d3 ≫ dn, and D-5-8-13-1 provides the optimal \
     robustness.",
    "Inverted bottleneck harms robustness, especially when added to deeper stages.",
    "For a single modification, b1,2 = 0.5, b3,4 = 0.25, gi = 2, and e = 1.5 all show \
     promising improvements. However, merging all three configurations makes the model less \
     robust, and the optimal width configurations are e = 2, g = 2 or e = 1.5, g = 1 with \
     b = 0.25.",
    "Under a fixed model capacity, first increase the network depth proportionally to the \
     optimal depth until catastrophic overfitting happens, i.e., a sudden drop in loss and \
     increase in training accuracy. The width is adjusted to fill the total parameter budget.",
    "Replacing the max-pooling in the stem stage with a downsampling shortcut in the first \
     stage significantly improves robustness.",
    "For the convolution layer in the stem stage, directly replacing it with a \"patchify\" \
     stem design contributes to the robustness. However, the optimal configurations are \
     increasing the channel width and setting kernel size = 7.",
    "Dense connection is not beneficial to robustness.",
    "Purely increasing the kernel size raises the model capacity but improves robustness \
     significantly. Thus, it is a prospective option when scaling up the network.",
    "Increasing dilation factor enlarges the attacking area, which leads to inferior \
     robustness.",
    "Activation function significantly affects robustness. The non-parametric SiLU provides \
     a competitive improvement.",
    "Reducing activation layers in a residual block severely hurts the robustness.",
    "The SE module significantly contributes to robustness.",
    "The robustness improves if we just replace the activation function in the SE block. But \
     the modification does not work favorably with switching the activation function in the \
     residual block.",
    "Switching BN to IN harms robustness.",
    "Reducing the first BN in a residual block benefits robustness.",
    "When scaling up the model, increasing the kernel size, depth, and width all contribute \
     to the robustness. But proportionally increasing the optimal depth configuration is most \
     effective.",
    "There exists a saturation point for purely increasing the depth to fill the parameter \
     budget. We should enlarge channel widths when such a degradation happens.",
];

/// The full rule document shipped with the crate.
pub const GUIDELINE_DOC: &str = include_str!("../docs/guidelines.md");

/// Outcome of checking one rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineStatus {
    Satisfied,
    Violated,
    Advisory,
    NotApplicable,
}

impl std::fmt::Display for GuidelineStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GuidelineStatus::Satisfied => "satisfied",
            GuidelineStatus::Violated => "violated",
            GuidelineStatus::Advisory => "advisory",
            GuidelineStatus::NotApplicable => "not_applicable",
        };
        f.write_str(s)
    }
}

/// One rule's finding for a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct GuidelineFinding {
    /// Rule id, 1 through 18.
    pub id: u32,
    pub status: GuidelineStatus,
    /// Configuration-specific explanation.
    pub message: String,
    /// The rule sentence, verbatim from the catalog.
    pub citation: &'static str,
}

/// All 18 findings for a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct GuidelineReport {
    pub config: String,
    /// Depth-rule constant used for rule 2.
    pub depth_rule_c: u32,
    pub findings: Vec<GuidelineFinding>,
}

/// Tunable linter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuidelineParams {
    /// Depth-rule constant: rule 2 requires `d3 > c * d4`.
    pub c: u32,
}

impl Default for GuidelineParams {
    fn default() -> Self {
        GuidelineParams { c: 3 }
    }
}

/// Evaluates the 4-stage depth rule `d1 < d2 < d3 > c*d4`.
///
/// Returns `None` when the vector is not 4 stages long (the rule only speaks
/// about 4-stage networks).
pub fn check_depth_rule(depths: &[u32], params: &GuidelineParams) -> Option<bool> {
    if depths.len() != 4 {
        return None;
    }
    let (d1, d2, d3, d4) = (depths[0], depths[1], depths[2], depths[3]);
    Some(d1 < d2 && d2 < d3 && d3 > params.c * d4)
}

fn act_name(kind: ActKind) -> &'static str {
    match kind {
        ActKind::Relu => "relu",
        ActKind::Gelu => "gelu",
        ActKind::Silu => "silu",
        ActKind::Prelu => "prelu",
        ActKind::Psilu => "psilu",
        ActKind::Pssilu => "pssilu",
    }
}

/// Worst of two statuses under violated > advisory > satisfied.
fn worse(a: GuidelineStatus, b: GuidelineStatus) -> GuidelineStatus {
    use GuidelineStatus::*;
    match (a, b) {
        (Violated, _) | (_, Violated) => Violated,
        (Advisory, _) | (_, Advisory) => Advisory,
        _ => Satisfied,
    }
}

/// Checks all 18 rules against a validated configuration.
pub fn evaluate_guidelines(cfg: &ArchConfig, params: &GuidelineParams) -> GuidelineReport {
    use GuidelineStatus::*;
    let n = cfg.num_stages();
    let depths = cfg.depths();
    let mut findings = Vec::with_capacity(18);
    let mut push = |id: u32, status: GuidelineStatus, message: String| {
        findings.push(GuidelineFinding {
            id,
            status,
            message,
            citation: GUIDELINE_CATALOG[(id - 1) as usize],
        });
    };

    // 1: stage-count tiering.
    let (status, note) = match n {
        3 | 4 => (Satisfied, "within the strongest tier"),
        5 => (Advisory, "one tier below the strongest"),
        _ => (Violated, "the weakest tier"),
    };
    push(1, status, format!("{n}-stage network is {note}"));

    // 2: depth rule for 4-stage networks.
    match check_depth_rule(&depths, params) {
        None => push(
            2,
            NotApplicable,
            format!("depth rule applies to 4-stage networks only (this one has {n})"),
        ),
        Some(true) => push(
            2,
            Satisfied,
            format!("depths {depths:?} satisfy d1 < d2 < d3 > {}*d4", params.c),
        ),
        Some(false) => push(
            2,
            Violated,
            format!("depths {depths:?} break d1 < d2 < d3 > {}*d4", params.c),
        ),
    }

    // 3: inverted bottlenecks.
    let inverted: Vec<usize> = cfg
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.bottleneck_multiplier > 1.0)
        .map(|(i, _)| i + 1)
        .collect();
    if inverted.is_empty() {
        push(3, Satisfied, "no stage uses an inverted bottleneck".into());
    } else {
        push(
            3,
            Violated,
            format!("stages {inverted:?} use inverted bottlenecks (worse in deeper stages)"),
        );
    }

    // 4: width-configuration interplay (procedural).
    let gs: Vec<u32> = cfg.stages.iter().map(|s| s.groups).collect();
    let bs: Vec<f64> = cfg.stages.iter().map(|s| s.bottleneck_multiplier).collect();
    push(
        4,
        Advisory,
        format!(
            "review b/g/e jointly rather than per knob (current g = {gs:?}, b = {bs:?}); \
             recommended combinations: e = 2 with g = 2, or e = 1.5 with g = 1, at b = 0.25"
        ),
    );

    // 5: depth-then-width budget procedure.
    push(
        5,
        Advisory,
        "procedural: deepen proportionally until multi-step robustness collapses during \
         single-step training, then fit widths to the parameter budget (see the budget \
         fitter)"
            .into(),
    );

    // 6: stem downsampling shortcut.
    match cfg.stem.kind {
        StemKind::ConvStageDownsample => push(
            6,
            Satisfied,
            "stem downsampling is moved into stage 1's first block".into(),
        ),
        StemKind::ConvMaxpool => push(
            6,
            Violated,
            "stem still uses max-pooling; move the downsampling into stage 1".into(),
        ),
        _ => push(
            6,
            Advisory,
            "stem has no max-pooling to replace; the rule targets pooled stems".into(),
        ),
    }

    // 7: stem width/kernel optimum.
    match cfg.stem.kind {
        StemKind::Patchify => push(
            7,
            Advisory,
            "patchify stems help, but a wide (≥ 96) kernel-7 conv stem is the optimum".into(),
        ),
        _ => {
            if cfg.stem.width >= 96 && cfg.stem.kernel == 7 {
                push(
                    7,
                    Satisfied,
                    format!(
                        "stem width {} with kernel 7 matches the recommended configuration",
                        cfg.stem.width
                    ),
                );
            } else {
                push(
                    7,
                    Violated,
                    format!(
                        "stem width {} / kernel {} misses the recommended width ≥ 96 with \
                         kernel 7",
                        cfg.stem.width, cfg.stem.kernel
                    ),
                );
            }
        }
    }

    // 8: dense connections.
    let dense: Vec<usize> = cfg
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dense_ratio > 1)
        .map(|(i, _)| i + 1)
        .collect();
    if dense.is_empty() {
        push(8, Satisfied, "no stage uses dense connections".into());
    } else {
        push(
            8,
            Violated,
            format!("stages {dense:?} use dense connections (dense_ratio > 1)"),
        );
    }

    // 9: kernel size as a scaling option.
    let max_kernel = cfg.stages.iter().map(|s| s.kernel).max().unwrap_or(3);
    push(
        9,
        Advisory,
        if max_kernel > 3 {
            format!(
                "kernel {max_kernel} raises capacity along with robustness; account for the \
                 parameter cost when comparing at fixed budgets"
            )
        } else {
            "kernel growth is a prospective scaling direction beyond the current 3".into()
        },
    );

    // 10: dilation.
    let dilated: Vec<usize> = cfg
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dilation > 1)
        .map(|(i, _)| i + 1)
        .collect();
    if dilated.is_empty() {
        push(10, Satisfied, "no stage uses dilated convolutions".into());
    } else {
        push(
            10,
            Violated,
            format!("stages {dilated:?} use dilation > 1"),
        );
    }

    // 11: activation choice (worst across stages).
    let mut status = Satisfied;
    let mut kinds: Vec<&str> = Vec::new();
    for s in &cfg.stages {
        let k = s.activation.kind;
        let st = match k {
            ActKind::Silu => Satisfied,
            ActKind::Gelu | ActKind::Relu => Advisory,
            ActKind::Prelu | ActKind::Psilu | ActKind::Pssilu => Violated,
        };
        status = worse(status, st);
        if !kinds.contains(&act_name(k)) {
            kinds.push(act_name(k));
        }
    }
    let message = match status {
        Satisfied => format!("all stages use silu ({kinds:?})"),
        Advisory => format!("non-parametric activations {kinds:?}; silu is the recommendation"),
        _ => format!("parametric activations {kinds:?} underperform; prefer silu"),
    };
    push(11, status, message);

    // 12: activation-layer removal.
    let reduced: Vec<usize> = cfg
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.activation.pattern.iter().any(|p| !p))
        .map(|(i, _)| i + 1)
        .collect();
    if reduced.is_empty() {
        push(12, Satisfied, "all three block activations present".into());
    } else {
        push(
            12,
            Violated,
            format!("stages {reduced:?} drop block activations"),
        );
    }

    // 13: SE presence.
    if cfg.stages.iter().all(|s| s.se.enabled) {
        push(13, Satisfied, "SE enabled in every stage".into());
    } else {
        let off: Vec<usize> = cfg
            .stages
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.se.enabled)
            .map(|(i, _)| i + 1)
            .collect();
        push(13, Violated, format!("SE disabled in stages {off:?}"));
    }

    // 14: SE activation swap vs simultaneous block swap.
    let se_stages: Vec<&crate::config::StageConfig> =
        cfg.stages.iter().filter(|s| s.se.enabled).collect();
    if se_stages.is_empty() {
        push(
            14,
            NotApplicable,
            "no SE blocks; the rule concerns SE activation choices".into(),
        );
    } else if se_stages
        .iter()
        .any(|s| s.se.activation != ActKind::Relu && s.activation.kind != ActKind::Relu)
    {
        push(
            14,
            Violated,
            "SE and residual activations are swapped simultaneously".into(),
        );
    } else if se_stages.iter().any(|s| s.se.activation != ActKind::Relu) {
        push(
            14,
            Satisfied,
            "SE activation replaced while residual blocks keep relu".into(),
        );
    } else {
        push(
            14,
            Advisory,
            "SE blocks use relu; replacing only the SE activation can help".into(),
        );
    }

    // 15: normalization kind.
    let in_stages: Vec<usize> = cfg
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.norm.kind == NormKind::InstanceNorm)
        .map(|(i, _)| i + 1)
        .collect();
    if in_stages.is_empty() {
        push(15, Satisfied, "all stages use batch norm".into());
    } else {
        push(
            15,
            Violated,
            format!("stages {in_stages:?} use instance norm"),
        );
    }

    // 16: first-norm removal.
    if cfg
        .stages
        .iter()
        .all(|s| s.norm.pattern == [false, true, true])
    {
        push(
            16,
            Satisfied,
            "first block norm removed in every stage".into(),
        );
    } else {
        push(
            16,
            Violated,
            "keep norms 2 and 3 but drop the first block norm (pattern 0-1-1)".into(),
        );
    }

    // 17 and 18: scaling tendencies.
    push(
        17,
        Advisory,
        "when scaling up, prefer proportional depth increases first; kernel and width also \
         help"
            .into(),
    );
    push(
        18,
        Advisory,
        "watch for depth saturation at large budgets and shift capacity into widths when \
         robustness stops improving"
            .into(),
    );

    GuidelineReport {
        config: cfg.name.clone(),
        depth_rule_c: params.c,
        findings,
    }
}

/// One field whose value differs between two configurations.
#[derive(Debug, Clone, Serialize)]
pub struct FieldChange {
    /// Dotted path, e.g. `stages[2].norm.pattern`.
    pub field: String,
    pub from: String,
    pub to: String,
}

/// One rule whose status differs between two configurations.
#[derive(Debug, Clone, Serialize)]
pub struct StatusChange {
    pub id: u32,
    pub from: GuidelineStatus,
    pub to: GuidelineStatus,
}

/// Structural diff plus per-rule status deltas.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub changed_fields: Vec<FieldChange>,
    pub status_changes: Vec<StatusChange>,
}

impl CompareReport {
    pub fn is_empty(&self) -> bool {
        self.changed_fields.is_empty() && self.status_changes.is_empty()
    }
}

/// Compares two configurations structurally (names excluded) and reports
/// rules whose status changes between them.
pub fn compare_configs(a: &ArchConfig, b: &ArchConfig) -> CompareReport {
    let mut changed_fields = Vec::new();
    let mut diff = |field: &str, from: String, to: String| {
        if from != to {
            changed_fields.push(FieldChange {
                field: field.to_string(),
                from,
                to,
            });
        }
    };

    diff(
        "num_classes",
        a.num_classes.to_string(),
        b.num_classes.to_string(),
    );
    diff(
        "input_channels",
        a.input_channels.to_string(),
        b.input_channels.to_string(),
    );
    diff(
        "stem.kind",
        format!("{:?}", a.stem.kind),
        format!("{:?}", b.stem.kind),
    );
    diff("stem.width", a.stem.width.to_string(), b.stem.width.to_string());
    diff(
        "stem.kernel",
        a.stem.kernel.to_string(),
        b.stem.kernel.to_string(),
    );
    diff(
        "stem.patch_stride",
        format!("{:?}", a.stem.patch_stride),
        format!("{:?}", b.stem.patch_stride),
    );
    if a.stages.len() != b.stages.len() {
        diff(
            "stages.len",
            a.stages.len().to_string(),
            b.stages.len().to_string(),
        );
    } else {
        for (i, (sa, sb)) in a.stages.iter().zip(&b.stages).enumerate() {
            let p = |f: &str| format!("stages[{i}].{f}");
            diff(&p("depth"), sa.depth.to_string(), sb.depth.to_string());
            diff(&p("width"), sa.width.to_string(), sb.width.to_string());
            diff(
                &p("bottleneck_multiplier"),
                sa.bottleneck_multiplier.to_string(),
                sb.bottleneck_multiplier.to_string(),
            );
            diff(&p("groups"), sa.groups.to_string(), sb.groups.to_string());
            diff(&p("kernel"), sa.kernel.to_string(), sb.kernel.to_string());
            diff(
                &p("dilation"),
                sa.dilation.to_string(),
                sb.dilation.to_string(),
            );
            diff(&p("stride"), sa.stride.to_string(), sb.stride.to_string());
            diff(
                &p("dense_ratio"),
                sa.dense_ratio.to_string(),
                sb.dense_ratio.to_string(),
            );
            diff(
                &p("dense_mode"),
                format!("{:?}", sa.dense_mode),
                format!("{:?}", sb.dense_mode),
            );
            diff(
                &p("se.enabled"),
                sa.se.enabled.to_string(),
                sb.se.enabled.to_string(),
            );
            diff(&p("se.ratio"), sa.se.ratio.to_string(), sb.se.ratio.to_string());
            diff(
                &p("se.base"),
                format!("{:?}", sa.se.base),
                format!("{:?}", sb.se.base),
            );
            diff(
                &p("se.activation"),
                format!("{:?}", sa.se.activation),
                format!("{:?}", sb.se.activation),
            );
            diff(
                &p("activation.kind"),
                format!("{:?}", sa.activation.kind),
                format!("{:?}", sb.activation.kind),
            );
            diff(
                &p("activation.pattern"),
                format!("{:?}", sa.activation.pattern),
                format!("{:?}", sb.activation.pattern),
            );
            diff(
                &p("norm.kind"),
                format!("{:?}", sa.norm.kind),
                format!("{:?}", sb.norm.kind),
            );
            diff(
                &p("norm.pattern"),
                format!("{:?}", sa.norm.pattern),
                format!("{:?}", sb.norm.pattern),
            );
        }
    }
    diff(
        "head.pooling",
        format!("{:?}", a.head.pooling),
        format!("{:?}", b.head.pooling),
    );
    diff("head.bias", a.head.bias.to_string(), b.head.bias.to_string());

    let params = GuidelineParams::default();
    let ra = evaluate_guidelines(a, &params);
    let rb = evaluate_guidelines(b, &params);
    let status_changes = ra
        .findings
        .iter()
        .zip(&rb.findings)
        .filter(|(fa, fb)| fa.status != fb.status)
        .map(|(fa, fb)| StatusChange {
            id: fa.id,
            from: fa.status,
            to: fb.status,
        })
        .collect();

    CompareReport {
        changed_fields,
        status_changes,
    }
}
