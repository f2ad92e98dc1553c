//! Capacity-controlled width and depth fitting.
//!
//! Architecture comparisons are only meaningful under a fixed parameter
//! budget, so this module solves the inverse problem: given a structural
//! template and a budget, find stage widths whose exact parameter count lands
//! within tolerance of the budget.
//!
//! Widths live on a lattice (multiples of a rounding unit, further restricted
//! by each stage's bottleneck and group divisibility). Because
//! [`count_params`](crate::analyze::count_params) is nondecreasing in every
//! width, a bisection over a global scale factor brackets the budget; a local
//! scan over neighboring lattice points then minimizes the exact deviation.
//! The head, SE, and norm terms keep the count from being purely quadratic in
//! width, which is why the exact count is used as the oracle throughout
//! instead of a closed-form solve.

use crate::analyze::count_params;
use crate::config::{validate, ArchConfig};
use crate::error::{Error, Result};

/// Which widths the fit may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Every stage width scales independently (each snaps to its own nearest
    /// lattice point).
    ScaleAllWidths,
    /// Only the first stage width is free; later widths follow the template's
    /// expansion ratios exactly.
    BaseWidthWithFixedE,
}

/// Constraints for a width fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConstraints {
    /// Target total parameter count.
    pub budget: u64,
    /// Which widths are free to vary.
    pub free: FitMode,
    /// Widths are restricted to positive multiples of this unit.
    pub rounding: u32,
    /// Acceptable relative deviation |params - budget| / budget.
    pub tolerance: f64,
}

impl Default for FitConstraints {
    fn default() -> Self {
        FitConstraints {
            budget: 0,
            free: FitMode::ScaleAllWidths,
            rounding: 8,
            tolerance: 0.005,
        }
    }
}

const SCALE_LO: f64 = 0.05;
const SCALE_HI: f64 = 20.0;

/// Widths a stage accepts: positive multiples of the rounding unit whose
/// rounded inner width is positive and divisible by the stage's groups.
fn stage_accepts(cfg: &ArchConfig, stage: usize, width: u32) -> bool {
    if width == 0 {
        return false;
    }
    let s = &cfg.stages[stage];
    let wb = (f64::from(width) * s.bottleneck_multiplier).round() as u32;
    wb >= 1 && wb % s.groups == 0
}

/// Snaps a real-valued width target to the nearest acceptable lattice point
/// for the given stage, expanding outward when the nearest multiple is
/// invalid. Ties break toward the smaller width.
fn snap_width(cfg: &ArchConfig, stage: usize, target: f64, rounding: u32) -> Option<u32> {
    let r = f64::from(rounding);
    let k0 = (target / r).round().max(1.0) as i64;
    let mut best: Option<(f64, u32)> = None;
    for delta in 0..=256i64 {
        for k in [k0 - delta, k0 + delta] {
            if k < 1 {
                continue;
            }
            let w = (k as u64 * u64::from(rounding)) as u32;
            if !stage_accepts(cfg, stage, w) {
                continue;
            }
            let dist = (f64::from(w) - target).abs();
            let better = match best {
                None => true,
                Some((bd, bw)) => dist < bd || (dist == bd && w < bw),
            };
            if better {
                best = Some((dist, w));
            }
        }
        // Once a point is found, one extra ring suffices to rule out a
        // closer point on the other side.
        if let Some((bd, _)) = best {
            if (delta as f64 - 1.0) * r > bd {
                break;
            }
        }
    }
    best.map(|(_, w)| w)
}

/// Realizes the widths implied by a scale factor under the given mode.
fn widths_at_scale(
    template: &ArchConfig,
    scale: f64,
    mode: FitMode,
    rounding: u32,
) -> Option<Vec<u32>> {
    let base = template.widths();
    match mode {
        FitMode::ScaleAllWidths => base
            .iter()
            .enumerate()
            .map(|(i, &w)| snap_width(template, i, scale * f64::from(w), rounding))
            .collect(),
        FitMode::BaseWidthWithFixedE => {
            let w1 = snap_width(template, 0, scale * f64::from(base[0]), rounding)?;
            derive_chain(template, w1, rounding)
        }
    }
}

/// Derives the full width vector from a first-stage width, preserving the
/// template's expansion ratios.
fn derive_chain(template: &ArchConfig, w1: u32, rounding: u32) -> Option<Vec<u32>> {
    let base = template.widths();
    base.iter()
        .enumerate()
        .map(|(i, &w)| {
            let ratio = f64::from(w) / f64::from(base[0]);
            snap_width(template, i, f64::from(w1) * ratio, rounding)
        })
        .collect()
}

fn params_of(template: &ArchConfig, widths: &[u32]) -> u64 {
    count_params(&template.clone().with_widths(widths)).total
}

/// Fits the template's stage widths to a parameter budget.
///
/// A monotone bisection over a global width scale in `[0.05, 20]` brackets
/// the budget; a scan over the adjacent lattice points (one rounding step per
/// free width) then picks the exact-count minimizer of `|params - budget|`,
/// breaking ties toward the smaller total. Fails when even the best lattice
/// point deviates by more than the tolerance.
pub fn fit_width(template: &ArchConfig, constraints: &FitConstraints) -> Result<ArchConfig> {
    validate(template)?;
    if constraints.budget == 0 {
        return Err(Error::BudgetFit("budget must be positive".into()));
    }
    if constraints.rounding == 0 {
        return Err(Error::BudgetFit("rounding must be positive".into()));
    }
    if !(constraints.tolerance > 0.0) {
        return Err(Error::BudgetFit("tolerance must be positive".into()));
    }
    let mode = constraints.free;
    let rounding = constraints.rounding;
    let budget = constraints.budget;

    let eval = |scale: f64| -> Option<(Vec<u32>, u64)> {
        let widths = widths_at_scale(template, scale, mode, rounding)?;
        let p = params_of(template, &widths);
        Some((widths, p))
    };

    let (mut lo, mut hi) = (SCALE_LO, SCALE_HI);
    let lo_pt = eval(lo);
    let hi_pt = eval(hi);
    let mut seeds: Vec<Vec<u32>> = Vec::new();
    match (&lo_pt, &hi_pt) {
        (Some((lw, lp)), Some((hw, hp))) => {
            if *lp >= budget {
                seeds.push(lw.clone());
            } else if *hp <= budget {
                seeds.push(hw.clone());
            } else {
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    match eval(mid) {
                        Some((_, p)) if p < budget => lo = mid,
                        Some(_) => hi = mid,
                        None => break,
                    }
                }
                for s in [lo, hi] {
                    if let Some((w, _)) = eval(s) {
                        if !seeds.contains(&w) {
                            seeds.push(w);
                        }
                    }
                }
            }
        }
        _ => {
            return Err(Error::BudgetFit(
                "no acceptable widths exist on the rounding lattice".into(),
            ))
        }
    }

    // Local scan: one rounding step per free width around each seed.
    let mut best: Option<(u64, u64, Vec<u32>)> = None; // (deviation, params, widths)
    let consider = |widths: Vec<u32>, best: &mut Option<(u64, u64, Vec<u32>)>| {
        let p = params_of(template, &widths);
        let dev = p.abs_diff(budget);
        let better = match best {
            None => true,
            Some((bd, bp, bw)) => {
                dev < *bd || (dev == *bd && (p < *bp || (p == *bp && widths < *bw)))
            }
        };
        if better {
            *best = Some((dev, p, widths));
        }
    };
    for seed in &seeds {
        match mode {
            FitMode::ScaleAllWidths => {
                let n = seed.len();
                let mut offsets = vec![0i64; n];
                loop {
                    let candidate: Option<Vec<u32>> = seed
                        .iter()
                        .zip(&offsets)
                        .enumerate()
                        .map(|(i, (&w, &off))| {
                            let v = i64::from(w) + off * i64::from(rounding);
                            if v >= 1 && stage_accepts(template, i, v as u32) {
                                Some(v as u32)
                            } else {
                                None
                            }
                        })
                        .collect();
                    if let Some(widths) = candidate {
                        consider(widths, &mut best);
                    }
                    // Advance the offset vector through {-1, 0, 1}^n.
                    let mut i = 0;
                    loop {
                        if i == n {
                            break;
                        }
                        offsets[i] += 1;
                        if offsets[i] > 1 {
                            offsets[i] = -1;
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    if i == n {
                        break;
                    }
                }
            }
            FitMode::BaseWidthWithFixedE => {
                for off in -1i64..=1 {
                    let v = i64::from(seed[0]) + off * i64::from(rounding);
                    if v < 1 {
                        continue;
                    }
                    if let Some(widths) = derive_chain(template, v as u32, rounding) {
                        consider(widths, &mut best);
                    }
                }
            }
        }
    }

    let (dev, params, widths) = best.ok_or_else(|| {
        Error::BudgetFit("no acceptable widths exist on the rounding lattice".into())
    })?;
    let rel = dev as f64 / budget as f64;
    if rel > constraints.tolerance {
        return Err(Error::BudgetFit(format!(
            "budget {budget} unreachable: closest lattice point has {params} parameters \
             (relative deviation {rel:.4} exceeds tolerance {:.4})",
            constraints.tolerance
        )));
    }
    let fitted = template.clone().with_widths(&widths);
    validate(&fitted)?;
    Ok(fitted)
}

/// Scales a depth vector by a factor, rounding half away from zero and
/// clamping every stage to at least one block.
pub fn scale_depth(depths: &[u32], factor: f64) -> Vec<u32> {
    depths
        .iter()
        .map(|&d| (f64::from(d) * factor).round().max(1.0) as u32)
        .collect()
}

/// One row of a depth–width sweep.
#[derive(Debug)]
pub struct SweepRow {
    pub depths: Vec<u32>,
    pub budget: u64,
    /// The fitted configuration, or the fit error for this row.
    pub outcome: Result<ArchConfig>,
}

impl SweepRow {
    pub fn widths(&self) -> Option<Vec<u32>> {
        self.outcome.as_ref().ok().map(|c| c.widths())
    }

    pub fn params(&self) -> Option<u64> {
        self.outcome.as_ref().ok().map(|c| count_params(c).total)
    }

    pub fn rel_err(&self) -> Option<f64> {
        self.params()
            .map(|p| p.abs_diff(self.budget) as f64 / self.budget as f64)
    }

    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        }
    }
}

/// Fits one configuration per depth vector against a common budget.
///
/// Rows whose fit fails (including depth vectors of the wrong length) are
/// marked rather than aborting the sweep, and output order follows the input
/// grid.
pub fn sweep_depth_width(
    base: &ArchConfig,
    depth_grid: &[Vec<u32>],
    constraints: &FitConstraints,
) -> Vec<SweepRow> {
    depth_grid
        .iter()
        .map(|depths| {
            let outcome = if depths.len() != base.num_stages() {
                Err(Error::BudgetFit(format!(
                    "depth vector has {} entries but the base config has {} stages",
                    depths.len(),
                    base.num_stages()
                )))
            } else {
                fit_width(&base.clone().with_depths(depths), constraints)
            };
            SweepRow {
                depths: depths.clone(),
                budget: constraints.budget,
                outcome,
            }
        })
        .collect()
}
