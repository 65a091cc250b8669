//! Flat comma-separated exports and JSONL helpers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use ttrl_core::analysis::{ConfidenceBin, GridTable};
use ttrl_core::trainer::MetricsRecord;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| serde_json::from_str(&line?).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

/// `attempts_histogram` becomes one column per attempt.
pub fn metrics_to_csv(jsonl: &Path, out: &Path) -> Result<()> {
    let records = read_metrics(jsonl)?;
    let attempts = records.iter().map(|r| r.attempts_histogram.len()).max().unwrap_or(3);
    let mut w = writer(out)?;
    let mut header: Vec<String> = [
        "step",
        "eval_accuracy",
        "pseudo_label_accuracy",
        "mean_confidence",
        "collapse_count",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=attempts).map(|a| format!("attempts_{a}")));
    header.extend(["objective_value", "clipped_fraction", "grad_norm", "mean_kl"].map(String::from));
    w.write_record(&header)?;
    for r in &records {
        let mut row = vec![
            r.step.to_string(),
            opt(r.eval_accuracy),
            opt(r.pseudo_label_accuracy),
            r.mean_confidence.to_string(),
            r.collapse_count.to_string(),
        ];
        row.extend((0..attempts).map(|i| r.attempts_histogram.get(i).copied().unwrap_or(0).to_string()));
        row.extend([r.objective_value, r.clipped_fraction, r.grad_norm, r.mean_kl].map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn bins_to_csv(bins: &[ConfidenceBin], out: &Path) -> Result<()> {
    let mut w = writer(out)?;
    w.write_record(["lower", "upper", "midpoint", "count", "mean_accuracy"])?;
    for b in bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.midpoint().to_string(),
            b.count.to_string(),
            opt(b.mean_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_csv(header: &[&str], rows: &[Vec<String>], out: &Path) -> Result<()> {
    let mut w = writer(out)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn grid_to_csv(grid: &GridTable, out: &Path) -> Result<()> {
    let rows: Vec<Vec<String>> = grid
        .rows
        .iter()
        .map(|r| {
            vec![
                r.arm.clone(),
                r.seed.to_string(),
                r.report_accuracy.to_string(),
                r.final_accuracy.to_string(),
            ]
        })
        .chain(grid.summary.iter().map(|s| {
            vec![
                s.arm.clone(),
                "mean".into(),
                s.mean_report_accuracy.to_string(),
                s.mean_final_accuracy.to_string(),
            ]
        }))
        .collect();
    rows_to_csv(&["arm", "seed", "report_accuracy", "final_accuracy"], &rows, out)
}
