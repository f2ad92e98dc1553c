//! Multiply-accumulate counting checks against the independent enumeration
//! oracle and a hand-derived reference total for the baseline at 224x224.

mod common;

use common::{oracle_macs, oracle_params};
use robarch::analyze::{count_macs, count_params, layer_table};
use robarch::config::preset;

#[test]
fn resnet50_gmacs_at_224() {
    let cfg = preset("resnet50").unwrap();
    let report = count_macs(&cfg, 224).unwrap();
    assert_eq!(report.total, oracle_macs(&cfg, 224));
    // ~4.09 GMACs for one 224x224 sample, within 2%.
    let target = 4.09e9;
    assert!(
        (report.total as f64 - target).abs() <= 0.02 * target,
        "total {} too far from {target}",
        report.total
    );
    assert_eq!(report.total, 4_089_184_256);
    assert_eq!(report.stem, 118_013_952);
    assert_eq!(report.head, 2_048_000);
    assert_eq!(
        report.stages,
        vec![667_942_912, 1_027_604_480, 1_464_336_384, 809_238_528]
    );
    let sum = report.stem + report.stages.iter().sum::<u64>() + report.head;
    assert_eq!(report.total, sum);
}

#[test]
fn dilation_is_mac_neutral() {
    let base = count_macs(&preset("resnet50").unwrap(), 224).unwrap().total;
    for name in ["dilation2", "dilation3"] {
        let cfg = preset(name).unwrap();
        assert_eq!(count_macs(&cfg, 224).unwrap().total, base, "{name}");
    }
}

#[test]
fn resolution_must_divide_downsampling_factor() {
    let cfg = preset("resnet50").unwrap();
    assert_eq!(cfg.downsampling_factor(), 32);
    let err = count_macs(&cfg, 100).unwrap_err().to_string();
    assert!(
        err.contains("not divisible by downsampling factor 32"),
        "unexpected message: {err}"
    );
    assert!(count_macs(&cfg, 32).is_ok());
    assert!(count_macs(&cfg, 224).is_ok());
}

#[test]
fn downsampling_factors_by_stem() {
    let factors = [
        ("resnet50", 32),
        ("stem-movedown", 32),
        ("stem-downsample", 16),
        ("patchify-4", 32),
        ("patchify-2", 16),
    ];
    for (name, factor) in factors {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.downsampling_factor(), factor, "{name}");
        assert!(count_macs(&cfg, 224).is_ok(), "{name} at 224");
    }
}

#[test]
fn library_matches_oracle_across_presets() {
    for name in robarch::config::preset_names() {
        let cfg = preset(name).unwrap();
        let res = 224;
        if res % cfg.downsampling_factor() != 0 {
            continue;
        }
        let report = count_macs(&cfg, res).unwrap();
        assert_eq!(report.total, oracle_macs(&cfg, u64::from(res)), "{name}");
    }
}

#[test]
fn layer_table_sums_match_reports() {
    for name in ["resnet50", "robarch-s", "se-relu", "norm-in", "patchify-4"] {
        let cfg = preset(name).unwrap();
        let rows = layer_table(&cfg, 224).unwrap();
        let params: u64 = rows.iter().map(|r| r.params).sum();
        let macs: u64 = rows.iter().map(|r| r.macs).sum();
        assert_eq!(params, count_params(&cfg).total, "{name} params");
        assert_eq!(params, oracle_params(&cfg), "{name} params vs oracle");
        assert_eq!(macs, count_macs(&cfg, 224).unwrap().total, "{name} macs");
    }
}

#[test]
fn layer_table_shape_and_order() {
    let cfg = preset("resnet50").unwrap();
    let rows = layer_table(&cfg, 224).unwrap();
    assert_eq!(rows.first().unwrap().name, "stem.conv");
    assert_eq!(rows.last().unwrap().name, "head.fc");
    // 16 blocks, each with conv1..3 + norms + acts, plus stem and head rows.
    let convs = rows.iter().filter(|r| r.kind == "conv").count();
    assert_eq!(convs, 53); // 1 stem + 16*3 block convs + 4 projections
    let first = &rows[0];
    assert_eq!(
        (first.in_channels, first.out_channels, first.out_size),
        (3, 64, 112)
    );
    // Spatial sizes decrease monotonically through the body.
    let mut last = u32::MAX;
    for r in rows.iter().filter(|r| r.kind == "conv") {
        assert!(r.out_size <= last, "{} grew to {}", r.name, r.out_size);
        last = r.out_size;
    }
}

#[test]
fn runtime_is_fast() {
    let start = std::time::Instant::now();
    let cfg = preset("resnet50").unwrap();
    let _ = count_macs(&cfg, 224).unwrap();
    let _ = count_params(&cfg);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
