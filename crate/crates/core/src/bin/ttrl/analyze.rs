//! The `analyze` subcommand: calibration bins, regression and the baseline
//! comparison for one run, or an ablation table over several.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use ttrl_core::analysis::{arm_name, bin_confidence_accuracy, fit_regression, GridRow, GridTable, RegressionSummary};
use ttrl_core::env::{Dataset, Oracle};
use ttrl_core::evaluation::{calibration_pairs, greedy_accuracy, label_answers};
use ttrl_core::labeling::load_labels;
use ttrl_core::policy::PolicyParameters;

use crate::run::{RunManifest, METRICS_CSV};
use crate::table;

pub const BINS: &str = "bins.jsonl";
pub const BINS_CSV: &str = "bins.csv";
pub const REGRESSION: &str = "regression.json";
pub const COMPARISON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const GRID: &str = "grid.json";
pub const GRID_CSV: &str = "grid.csv";

#[derive(Debug, Serialize)]
struct RegressionRecord {
    #[serde(flatten)]
    summary: Option<RegressionSummary>,
    error: Option<String>,
}

/// Greedy accuracies of the initial policy (DI), the pseudo-labels (DIMV),
/// and the adapted policy at the report step and at the end.
#[derive(Debug, Serialize)]
struct Comparison {
    arm: String,
    seed: u64,
    di: f64,
    dimv: f64,
    adapted_report: f64,
    adapted_final: f64,
}

struct LoadedRun {
    manifest: RunManifest,
    oracle: Oracle,
    dir: PathBuf,
}

impl LoadedRun {
    fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        let dataset = Dataset::load(&manifest.dataset)
            .with_context(|| format!("loading the dataset named in {}", dir.display()))?;
        Ok(Self {
            oracle: dataset.oracle(),
            manifest,
            dir: dir.to_path_buf(),
        })
    }

    fn policy_accuracy(&self, rel: &Path) -> Result<f64> {
        let policy = PolicyParameters::load(&self.dir.join(rel))?;
        Ok(greedy_accuracy(&policy, &self.oracle)?)
    }

    fn arm(&self) -> String {
        let t = &self.manifest.config.train;
        arm_name(t.weight_kind, t.mas_attempts)
    }

    fn grid_row(&self) -> Result<GridRow> {
        let a = &self.manifest.artifacts;
        Ok(GridRow {
            arm: self.arm(),
            seed: self.manifest.seed,
            report_accuracy: self.policy_accuracy(&a.report_policy)?,
            final_accuracy: self.policy_accuracy(&a.final_policy)?,
        })
    }
}

pub fn cmd_analyze(run_dir: &Path, csv: bool) -> Result<()> {
    let run = LoadedRun::open(run_dir)?;
    let a = &run.manifest.artifacts;
    let labels = load_labels(&run_dir.join(&a.labels))?;

    let bins = bin_confidence_accuracy(&calibration_pairs(&labels, &run.oracle)?)?;
    table::write_jsonl(&run_dir.join(BINS), &bins)?;
    table::bins_to_csv(&bins, &run_dir.join(BINS_CSV))?;
    let regression = match fit_regression(&bins) {
        Ok(s) => RegressionRecord {
            summary: Some(s),
            error: None,
        },
        Err(e) => RegressionRecord {
            summary: None,
            error: Some(e.to_string()),
        },
    };
    table::write_json(&run_dir.join(REGRESSION), &regression)?;

    let row = run.grid_row()?;
    let comparison = Comparison {
        arm: row.arm,
        seed: row.seed,
        di: run.policy_accuracy(&a.initial_policy)?,
        dimv: run.oracle.accuracy(&label_answers(&labels))?,
        adapted_report: row.report_accuracy,
        adapted_final: row.final_accuracy,
    };
    table::write_json(&run_dir.join(COMPARISON), &comparison)?;
    if csv {
        let c = &comparison;
        table::rows_to_csv(
            &["arm", "seed", "di", "dimv", "adapted_report", "adapted_final"],
            &[vec![
                c.arm.clone(),
                c.seed.to_string(),
                c.di.to_string(),
                c.dimv.to_string(),
                c.adapted_report.to_string(),
                c.adapted_final.to_string(),
            ]],
            &run_dir.join(COMPARISON_CSV),
        )?;
        table::metrics_to_csv(&run_dir.join(&a.metrics), &run_dir.join(METRICS_CSV))?;
    }

    match &regression.summary {
        Some(r) => println!(
            "regression: slope {:.4} intercept {:.4} r {:.4} over {} bins{}",
            r.slope,
            r.intercept,
            r.pearson_r,
            r.points_used,
            if r.degenerate { " (degenerate)" } else { "" }
        ),
        None => println!("regression: not fitted ({})", regression.error.as_deref().unwrap_or("")),
    }
    println!(
        "accuracy: DI {:.4}  DIMV {:.4}  adapted@report {:.4}  adapted@final {:.4}",
        comparison.di, comparison.dimv, comparison.adapted_report, comparison.adapted_final
    );
    Ok(())
}

pub fn cmd_grid(run_dirs: &[PathBuf], out: &Path, csv: bool) -> Result<GridTable> {
    if run_dirs.is_empty() {
        bail!("--grid needs at least one run directory");
    }
    let rows = run_dirs
        .iter()
        .map(|d| LoadedRun::open(d)?.grid_row())
        .collect::<Result<Vec<_>>>()?;
    let grid = GridTable::from_rows(rows);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    table::write_json(&out.join(GRID), &grid)?;
    if csv {
        table::grid_to_csv(&grid, &out.join(GRID_CSV))?;
    }
    println!("{:<6} {:>6} {:>10} {:>10}", "arm", "seed", "report", "final");
    for r in &grid.rows {
        println!(
            "{:<6} {:>6} {:>10.4} {:>10.4}",
            r.arm, r.seed, r.report_accuracy, r.final_accuracy
        );
    }
    for s in &grid.summary {
        println!(
            "{:<6} {:>6} {:>10.4} {:>10.4}",
            s.arm, "mean", s.mean_report_accuracy, s.mean_final_accuracy
        );
    }
    Ok(grid)
}
