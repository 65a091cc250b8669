//! Confidence/accuracy binning, the binned regression, and ablation grids.

use serde::{Deserialize, Serialize};

use crate::advantage::WeightKind;
use crate::env::Dataset;
use crate::error::{Result, TtrlError};
use crate::evaluation::{greedy_accuracy, OracleObserver};
use crate::policy::{init_policy, InitParams};
use crate::trainer::{run_adaptation, run_pseudo_label_phase, AdaptationState, TrainConfig};

pub const BIN_COUNT: usize = 20;
pub const BIN_WIDTH: f64 = 1.0 / BIN_COUNT as f64;

/// Half-open bin `(lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_accuracy: Option<f64>,
}

impl ConfidenceBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Index of the `(i/20, (i+1)/20]` bin holding `conf`. Values within 1e-9 of
/// a boundary are snapped to it first so that e.g. 0.5 lands in (0.45, 0.50].
pub fn bin_index(conf: f64) -> Result<usize> {
    if !(conf > 0.0 && conf <= 1.0) {
        return Err(TtrlError::invalid("confidence", format!("{conf} not in (0, 1]")));
    }
    let scaled = conf * BIN_COUNT as f64;
    let snapped = if (scaled - scaled.round()).abs() < 1e-9 {
        scaled.round()
    } else {
        scaled
    };
    Ok((snapped.ceil() as usize).clamp(1, BIN_COUNT) - 1)
}

/// Bins `(confidence, correct)` pairs; every pair lands in exactly one bin.
pub fn bin_confidence_accuracy(items: &[(f64, bool)]) -> Result<Vec<ConfidenceBin>> {
    if items.is_empty() {
        return Err(TtrlError::invalid("labels", "nothing to bin"));
    }
    let mut counts = [0usize; BIN_COUNT];
    let mut correct = [0usize; BIN_COUNT];
    for &(conf, ok) in items {
        let i = bin_index(conf)?;
        counts[i] += 1;
        correct[i] += ok as usize;
    }
    Ok((0..BIN_COUNT)
        .map(|i| ConfidenceBin {
            lower: i as f64 * BIN_WIDTH,
            upper: (i + 1) as f64 * BIN_WIDTH,
            count: counts[i],
            mean_accuracy: (counts[i] > 0).then(|| correct[i] as f64 / counts[i] as f64),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub slope: f64,
    pub intercept: f64,
    /// 0 when the accuracies have no variance (see `degenerate`).
    pub pearson_r: f64,
    pub points_used: usize,
    pub degenerate: bool,
}

/// Least squares of mean accuracy on bin midpoint over the non-empty bins.
pub fn fit_regression(bins: &[ConfidenceBin]) -> Result<RegressionSummary> {
    let points: Vec<(f64, f64)> = bins
        .iter()
        .filter_map(|b| b.mean_accuracy.filter(|_| b.count > 0).map(|a| (b.midpoint(), a)))
        .collect();
    if points.len() < 2 {
        return Err(TtrlError::invalid(
            "bins",
            format!("{} non-empty bins; need at least 2", points.len()),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(TtrlError::invalid("bins", "all points share one midpoint"));
    }
    let slope = sxy / sxx;
    let degenerate = syy <= 1e-15 * n;
    let pearson_r = if degenerate {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    Ok(RegressionSummary {
        slope: if degenerate { 0.0 } else { slope },
        intercept: if degenerate { my } else { my - slope * mx },
        pearson_r,
        points_used: points.len(),
        degenerate,
    })
}

/// One module-ablation arm: confidence weighting and attempt count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub weight_kind: WeightKind,
    pub mas_attempts: usize,
}

/// Ablation-table name for a module setting: `G-MV` with both modules off,
/// otherwise `+C` for confidence weighting and `+M` for multiple attempts.
pub fn arm_name(weight_kind: WeightKind, mas_attempts: usize) -> String {
    match (weight_kind != WeightKind::Off, mas_attempts > 1) {
        (false, false) => "G-MV".into(),
        (false, true) => "+M".into(),
        (true, false) => "+C".into(),
        (true, true) => "+C+M".into(),
    }
}

/// Plain majority-vote GRPO, +multiple attempts, +confidence weighting, both.
pub fn standard_arms() -> Vec<Arm> {
    [
        (WeightKind::Off, 1),
        (WeightKind::Off, 3),
        (WeightKind::Exp, 1),
        (WeightKind::Exp, 3),
    ]
    .into_iter()
    .map(|(weight_kind, mas_attempts)| Arm {
        name: arm_name(weight_kind, mas_attempts),
        weight_kind,
        mas_attempts,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub arm: String,
    pub seed: u64,
    pub report_accuracy: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub mean_report_accuracy: f64,
    pub mean_final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
    pub summary: Vec<ArmSummary>,
}

impl GridTable {
    pub fn from_rows(rows: Vec<GridRow>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in &rows {
            if !names.contains(&r.arm) {
                names.push(r.arm.clone());
            }
        }
        let summary = names
            .into_iter()
            .map(|arm| {
                let mine: Vec<&GridRow> = rows.iter().filter(|r| r.arm == arm).collect();
                let n = mine.len() as f64;
                ArmSummary {
                    mean_report_accuracy: mine.iter().map(|r| r.report_accuracy).sum::<f64>() / n,
                    mean_final_accuracy: mine.iter().map(|r| r.final_accuracy).sum::<f64>() / n,
                    arm,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn summary_for(&self, arm: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == arm)
    }
}

/// Report-step and final greedy accuracy of one adaptation run.
pub fn adapted_accuracy(dataset: &Dataset, init: &InitParams, config: &TrainConfig) -> Result<(f64, f64)> {
    let oracle = dataset.oracle();
    let policy = init_policy(dataset, init)?;
    let labeled = run_pseudo_label_phase(&policy, &dataset.unlabeled(), config)?;
    let base = greedy_accuracy(&policy, &oracle)?;
    let mut observer = OracleObserver::new(&oracle);
    let (_, records) = run_adaptation(AdaptationState::new(policy, labeled), config, &mut observer)?;
    let at = |step: usize| {
        if step == 0 {
            base
        } else {
            records[step - 1].eval_accuracy.unwrap_or(f64::NAN)
        }
    };
    Ok((at(config.report_step), at(config.steps)))
}

/// Runs every arm for every seed on `base` and tabulates the accuracies.
pub fn ablation_grid(
    dataset: &Dataset,
    init: &InitParams,
    base: &TrainConfig,
    arms: &[Arm],
    seeds: &[u64],
) -> Result<GridTable> {
    let mut rows = Vec::with_capacity(arms.len() * seeds.len());
    for arm in arms {
        for &seed in seeds {
            let config = TrainConfig {
                weight_kind: arm.weight_kind,
                mas_attempts: arm.mas_attempts,
                seed,
                ..base.clone()
            };
            let (report_accuracy, final_accuracy) = adapted_accuracy(dataset, init, &config)?;
            rows.push(GridRow {
                arm: arm.name.clone(),
                seed,
                report_accuracy,
                final_accuracy,
            });
        }
    }
    Ok(GridTable::from_rows(rows))
}
