//! Report emission. JSON reports carry a `schema_version` field; CSV tables
//! use the fixed headers documented on each function. All output is
//! deterministic: map keys serialize in sorted order and numbers format via
//! the shortest round-trip representation.

use serde_json::{json, Value};

use crate::analyze::{LayerRow, MacReport, ParamReport};
use crate::attack::RobustnessResult;
use crate::config::ArchConfig;
use crate::fit::SweepRow;
use crate::guidelines::{CompareReport, GuidelineReport};
use crate::train::TrainHistory;

/// Version stamp on every JSON report this build emits.
pub const SCHEMA_VERSION: u32 = 1;

/// Joins a vector for compact CSV cells, e.g. `[3,4,6,3]` → `"3x4x6x3"`.
pub fn x_join(values: &[u32]) -> String {
    values
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// Parameter (and optionally MAC) totals for one architecture.
pub fn analyze_report(
    cfg: &ArchConfig,
    params: &ParamReport,
    macs: Option<&MacReport>,
) -> Value {
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "report": "analyze",
        "name": cfg.name,
        "depths": cfg.depths(),
        "widths": cfg.widths(),
        "params": params,
    });
    if let Some(m) = macs {
        report["macs"] = json!(m);
    }
    report
}

/// Per-layer table. Header:
/// `name,kind,in_channels,out_channels,out_size,params,macs`.
pub fn layers_csv(rows: &[LayerRow]) -> String {
    let mut out = String::from("name,kind,in_channels,out_channels,out_size,params,macs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name, r.kind, r.in_channels, r.out_channels, r.out_size, r.params, r.macs
        ));
    }
    out
}

/// Guideline findings for one architecture.
pub fn validate_report(report: &GuidelineReport) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": "validate",
        "config": report.config,
        "depth_rule_c": report.depth_rule_c,
        "findings": report.findings,
    })
}

/// Structural and guideline-status differences between two architectures.
pub fn compare_report(a: &ArchConfig, b: &ArchConfig, diff: &CompareReport) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": "compare",
        "a": a.name,
        "b": b.name,
        "changed_fields": diff.changed_fields,
        "status_changes": diff.status_changes,
    })
}

/// A budget-fit outcome: the fitted architecture plus its accounting.
pub fn fit_report(fitted: &ArchConfig, budget: u64, params: &ParamReport) -> Value {
    let rel_err = params.total.abs_diff(budget) as f64 / budget as f64;
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": "fit-budget",
        "budget": budget,
        "params": params.total,
        "rel_err": rel_err,
        "widths": fitted.widths(),
        "depths": fitted.depths(),
        "config": fitted,
    })
}

/// Depth–width sweep table. Header: `depths,widths,params,budget,rel_err,status`.
/// Vector cells are `x`-joined; failed rows leave the fitted cells empty.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("depths,widths,params,budget,rel_err,status\n");
    for r in rows {
        let widths = r.widths().map(|w| x_join(&w)).unwrap_or_default();
        let params = r.params().map(|p| p.to_string()).unwrap_or_default();
        let rel_err = r.rel_err().map(|e| e.to_string()).unwrap_or_default();
        // Keep the cell single-column even if an error message contains commas.
        let status = r.status().replace(',', ";");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            x_join(&r.depths),
            widths,
            params,
            r.budget,
            rel_err,
            status
        ));
    }
    out
}

/// Training curve table. Header:
/// `epoch,lr,train_loss,adv_train_acc,natural_train_acc,holdout_pgd_acc,holdout_natural_acc`.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from(
        "epoch,lr,train_loss,adv_train_acc,natural_train_acc,holdout_pgd_acc,holdout_natural_acc\n",
    );
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.lr,
            r.train_loss,
            r.adv_train_acc,
            r.natural_train_acc,
            r.holdout_pgd_acc,
            r.holdout_natural_acc
        ));
    }
    out
}

/// Training run summary: configuration echo, final epoch, and whether the
/// collapse detector fired.
pub fn train_report(
    model_name: &str,
    mode: &str,
    cfg: &crate::train::TrainConfig,
    history: &TrainHistory,
    collapse_epoch: Option<usize>,
) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": "train",
        "model": model_name,
        "mode": mode,
        "epochs": cfg.epochs,
        "test_eps": cfg.test_eps,
        "train_eps": cfg.train_eps(),
        "lr_max": cfg.lr_max,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "catastrophic_overfitting_epoch": collapse_epoch,
        "final": history.records.last(),
        "history": history.records,
    })
}

/// Robustness evaluation across budgets.
pub fn attack_report(model_name: &str, result: &RobustnessResult) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "report": "attack",
        "model": model_name,
        "natural_accuracy": result.natural_accuracy,
        "adversarial_accuracy": result.adversarial_accuracy,
        "per_eps": result.per_eps,
    })
}

/// Serializes a JSON report with a trailing newline, byte-stable per input.
pub fn to_json_string(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialization");
    s.push('\n');
    s
}
