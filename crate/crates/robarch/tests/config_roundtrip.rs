//! Config document parsing, defaulting, emission, and validation errors.

mod common;

use robarch::config::{
    emit_config, parse_config, preset, ActKind, DenseMode, NormKind, Pooling, SeBase, StemKind,
};

#[test]
fn emit_parse_roundtrip_is_identity_for_all_presets() {
    for name in robarch::config::preset_names() {
        let cfg = preset(name).unwrap();
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(cfg, back, "{name}");
        // Emission is deterministic and stable under a second round trip.
        assert_eq!(text, emit_config(&back), "{name}");
    }
}

#[test]
fn minimal_document_takes_defaults() {
    let cfg = parse_config(
        r#"{"stages": [{"depth": 3}, {"depth": 4}, {"depth": 6}, {"depth": 3}]}"#,
    )
    .unwrap();
    assert_eq!(cfg.name, "unnamed");
    assert_eq!(cfg.num_classes, 1000);
    assert_eq!(cfg.input_channels, 3);
    assert_eq!(cfg.stem.kind, StemKind::ConvMaxpool);
    assert_eq!((cfg.stem.width, cfg.stem.kernel), (64, 7));
    assert_eq!(cfg.stem.patch_stride, None);
    assert_eq!(cfg.widths(), vec![256, 512, 1024, 2048]);
    let s = &cfg.stages[0];
    assert_eq!(s.bottleneck_multiplier, 0.25);
    assert_eq!((s.groups, s.kernel, s.dilation), (1, 3, 1));
    assert_eq!(s.stride, 1); // later stages default to 2
    assert_eq!(cfg.stages[1].stride, 2);
    assert_eq!((s.dense_ratio, s.dense_mode), (1, DenseMode::Sum));
    assert!(!s.se.enabled);
    assert_eq!(s.se.ratio, 0.25);
    assert_eq!(s.se.base, SeBase::BlockInput);
    assert_eq!(s.se.activation, ActKind::Relu);
    assert_eq!(s.activation.kind, ActKind::Relu);
    assert_eq!(s.activation.pattern, [true; 3]);
    assert_eq!(s.norm.kind, NormKind::BatchNorm);
    assert_eq!(s.norm.pattern, [true; 3]);
    assert_eq!(cfg.head.pooling, Pooling::GlobalAverage);
    assert!(cfg.head.bias);
    // This is exactly the stock baseline.
    assert_eq!(cfg, preset("resnet50").unwrap().named("unnamed"));
}

#[test]
fn five_and_six_stage_defaults_repeat_final_width() {
    let cfg = parse_config(
        r#"{"stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap();
    assert_eq!(cfg.widths(), vec![256, 512, 1024, 2048, 2048]);
    let cfg = parse_config(
        r#"{"stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}, {"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap();
    assert_eq!(cfg.widths(), vec![256, 512, 1024, 2048, 2048, 2048]);
}

#[test]
fn stage_count_bounds() {
    let two = r#"{"stages": [{"depth": 1}, {"depth": 1}]}"#;
    let err = parse_config(two).unwrap_err().to_string();
    assert!(
        err.contains("stage count out of range [3,6]"),
        "unexpected message: {err}"
    );
    let seven = format!(
        r#"{{"stages": [{}]}}"#,
        vec![r#"{"depth": 1}"#; 7].join(", ")
    );
    let err = parse_config(&seven).unwrap_err().to_string();
    assert!(err.contains("stage count out of range [3,6]"));
}

#[test]
fn group_divisibility_error_message() {
    let text = r#"{"stages": [{"depth": 1, "width": 256, "groups": 3}, {"depth": 1}, {"depth": 1}]}"#;
    let err = parse_config(text).unwrap_err().to_string();
    assert!(
        err.contains("inner width 64 not divisible by groups 3"),
        "unexpected message: {err}"
    );
}

#[test]
fn unknown_fields_are_rejected() {
    let err = parse_config(r#"{"stages": [{"depth": 1, "wdith": 256}, {"depth": 1}, {"depth": 1}]}"#)
        .unwrap_err()
        .to_string();
    assert!(err.contains("wdith"), "unexpected message: {err}");
}

#[test]
fn patchify_constraints() {
    let ok = parse_config(
        r#"{"stem": {"kind": "patchify", "patch_stride": 4},
            "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap();
    assert_eq!(ok.stem.kernel, 4);
    assert_eq!(ok.stem.patch_stride, Some(4));

    let bad_stride = parse_config(
        r#"{"stem": {"kind": "patchify", "patch_stride": 3},
            "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap_err()
    .to_string();
    assert!(bad_stride.contains("must be 2 or 4"));

    let mismatched = parse_config(
        r#"{"stem": {"kind": "patchify", "kernel": 7, "patch_stride": 4},
            "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap_err()
    .to_string();
    assert!(mismatched.contains("kernel = stride = patch_stride"));

    let stray = parse_config(
        r#"{"stem": {"kind": "conv_maxpool", "patch_stride": 4},
            "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap_err()
    .to_string();
    assert!(stray.contains("only valid for patchify"));
}

#[test]
fn stage_downsample_stem_forces_first_stride() {
    let err = parse_config(
        r#"{"stem": {"kind": "conv_stage_downsample"},
            "stages": [{"depth": 1, "stride": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("stages[0].stride"));

    let ok = parse_config(
        r#"{"stem": {"kind": "conv_stage_downsample"},
            "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
    )
    .unwrap();
    assert_eq!(ok.stages[0].stride, 2);
}

#[test]
fn assorted_field_validations() {
    let cases = [
        (
            r#"{"stages": [{"depth": 0}, {"depth": 1}, {"depth": 1}]}"#,
            "stages[0].depth",
        ),
        (
            r#"{"stages": [{"depth": 1, "kernel": 4}, {"depth": 1}, {"depth": 1}]}"#,
            "stages[0].kernel",
        ),
        (
            r#"{"stages": [{"depth": 1, "stride": 3}, {"depth": 1}, {"depth": 1}]}"#,
            "stages[0].stride",
        ),
        (
            r#"{"stages": [{"depth": 2, "dense_ratio": 3}, {"depth": 1}, {"depth": 1}]}"#,
            "dense_ratio 3 exceeds stage depth 2",
        ),
        (
            r#"{"stages": [{"depth": 1, "se": {"ratio": 1.5}}, {"depth": 1}, {"depth": 1}]}"#,
            "se.ratio",
        ),
        (
            r#"{"num_classes": 0, "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
            "num_classes",
        ),
        (
            r#"{"stem": {"kernel": 8}, "stages": [{"depth": 1}, {"depth": 1}, {"depth": 1}]}"#,
            "odd kernel",
        ),
    ];
    for (text, needle) in cases {
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains(needle), "expected `{needle}` in `{err}`");
    }
}

#[test]
fn emitted_document_uses_snake_case_kinds() {
    let text = emit_config(&preset("robarch-s").unwrap());
    assert!(text.contains("\"conv_stage_downsample\""));
    assert!(text.contains("\"silu\""));
    assert!(text.contains("\"batch_norm\""));
    assert!(text.contains("\"block_input\""));
    assert!(text.contains("\"global_average\""));
    assert!(text.ends_with('\n'));
    // patch_stride is omitted when absent.
    assert!(!text.contains("patch_stride"));
    let patchified = emit_config(&preset("patchify-4").unwrap());
    assert!(patchified.contains("\"patch_stride\": 4"));
}

#[test]
fn unknown_preset_error() {
    let err = preset("resnet51").unwrap_err().to_string();
    assert!(err.contains("resnet51"), "unexpected message: {err}");
}
