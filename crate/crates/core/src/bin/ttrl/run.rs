//! The `run` subcommand: pseudo-label phase, adaptation, checkpoints and the
//! manifest that marks a run complete.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ttrl_core::env::{Dataset, Oracle};
use ttrl_core::evaluation::{greedy_accuracy, label_answers};
use ttrl_core::labeling::{load_labels, save_labels, PseudoLabel};
use ttrl_core::policy::{init_policy, PolicyParameters};
use ttrl_core::trainer::{
    run_adaptation, run_pseudo_label_phase, AdaptationState, LabeledDataset, MetricsRecord, StepObserver,
};
use ttrl_core::TtrlError;

use crate::config::Settings;
use crate::table;

pub const MANIFEST: &str = "manifest.json";
pub const LABELS: &str = "labels.jsonl";
pub const METRICS: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const INITIAL: &str = "initial.policy";
pub const REPORT: &str = "report.policy";
pub const FINAL: &str = "final.policy";
pub const ABORTED: &str = "aborted.policy";
const CHECKPOINT_DIR: &str = "checkpoints";

/// Everything needed to re-run or analyse a completed run. Artifact paths
/// are relative to the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub config: crate::config::Settings,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub artifacts: Artifacts,
    pub skipped_questions: usize,
    pub resumed_from_step: Option<usize>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifacts {
    pub labels: PathBuf,
    pub metrics: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub initial_policy: PathBuf,
    pub report_policy: PathBuf,
    pub final_policy: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        if !path.is_file() {
            bail!(
                "{} has no {MANIFEST}: the run is incomplete or this is not a run directory",
                run_dir.display()
            );
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub struct RunOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub settings: Settings,
    pub checkpoint_every: usize,
    pub resume: bool,
    pub csv: bool,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn checkpoint_name(step: usize) -> PathBuf {
    Path::new(CHECKPOINT_DIR).join(format!("step-{step:06}.policy"))
}

/// Highest-step checkpoint in `out` not beyond `max_step`.
fn latest_checkpoint(out: &Path, max_step: usize) -> Result<Option<(usize, PathBuf)>> {
    let dir = out.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let step = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".policy"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(step) = step.filter(|s| *s <= max_step) {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, checkpoint_name(step)));
            }
        }
    }
    Ok(best)
}

/// Keeps the first `steps` lines of the metrics file.
fn truncate_metrics(path: &Path, steps: usize) -> Result<()> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .take(steps)
        .collect::<std::io::Result<_>>()?;
    if lines.len() < steps {
        bail!(
            "{} has {} records but the checkpoint is at step {steps}",
            path.display(),
            lines.len()
        );
    }
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn io_err(path: &Path, source: std::io::Error) -> TtrlError {
    TtrlError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Oracle diagnostics plus per-step persistence.
struct RunObserver<'a> {
    oracle: &'a Oracle,
    out: &'a Path,
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    checkpoint_every: usize,
    report_step: usize,
    checkpoints: Vec<PathBuf>,
}

impl StepObserver for RunObserver<'_> {
    fn eval_accuracy(&mut self, policy: &PolicyParameters) -> ttrl_core::Result<Option<f64>> {
        greedy_accuracy(policy, self.oracle).map(Some)
    }

    fn label_accuracy(&mut self, labels: &[PseudoLabel]) -> ttrl_core::Result<Option<f64>> {
        self.oracle.accuracy(&label_answers(labels)).map(Some)
    }

    fn on_step(&mut self, record: &MetricsRecord, policy: &PolicyParameters) -> ttrl_core::Result<()> {
        let line = serde_json::to_string(record).map_err(|e| TtrlError::Parse {
            path: self.metrics_path.clone(),
            message: e.to_string(),
        })?;
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| io_err(&self.metrics_path, e))?;
        if record.step.is_multiple_of(self.checkpoint_every) {
            let name = checkpoint_name(record.step);
            policy.save(&self.out.join(&name))?;
            self.checkpoints.push(name);
        }
        if record.step == self.report_step {
            policy.save(&self.out.join(REPORT))?;
        }
        Ok(())
    }

    fn on_abort(&mut self, last_good: &PolicyParameters, step: usize) {
        eprintln!("aborting at step {}; last good policy saved to {ABORTED}", step + 1);
        if let Err(e) = last_good.save(&self.out.join(ABORTED)) {
            eprintln!("could not save {ABORTED}: {e}");
        }
    }
}

pub fn cmd_run(opts: RunOptions) -> Result<RunManifest> {
    let started = now_ms();
    let RunOptions {
        data,
        out,
        settings,
        checkpoint_every,
        resume,
        csv,
    } = opts;
    if checkpoint_every == 0 {
        bail!("--checkpoint-every must be at least 1");
    }
    let cfg = &settings.train;
    cfg.validate()?;
    if !resume && out.join(CHECKPOINT_DIR).is_dir() {
        fs::remove_dir_all(out.join(CHECKPOINT_DIR))?;
    }
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }

    let dataset = Dataset::load(&data)?;
    let data_abs = fs::canonicalize(&data)?;
    let oracle = dataset.oracle();
    let unlabeled = dataset.unlabeled();

    let resume_point = if resume {
        latest_checkpoint(&out, cfg.steps)?
    } else {
        None
    };
    let initial = if resume && out.join(INITIAL).is_file() {
        PolicyParameters::load(&out.join(INITIAL))?
    } else {
        let p = init_policy(&dataset, &settings.init)?;
        p.save(&out.join(INITIAL))?;
        p
    };

    let labels_path = out.join(LABELS);
    let labeled = if resume && labels_path.is_file() {
        LabeledDataset::new(&unlabeled, load_labels(&labels_path)?)?
    } else {
        let labeled = run_pseudo_label_phase(&initial, &unlabeled, cfg)?;
        save_labels(&labels_path, &labeled.labels)?;
        labeled
    };
    let skipped = labeled.skipped_count();

    let metrics_path = out.join(METRICS);
    let mut state = AdaptationState::new(initial.clone(), labeled);
    let mut checkpoints = Vec::new();
    let metrics_file = match &resume_point {
        Some((step, name)) => {
            truncate_metrics(&metrics_path, *step)?;
            state.policy = PolicyParameters::load(&out.join(name))?;
            state.start_step = *step;
            eprintln!("resuming from step {step}");
            checkpoints.extend((1..=*step).filter(|s| s % checkpoint_every == 0).map(checkpoint_name));
            OpenOptions::new().append(true).open(&metrics_path)
        }
        None => File::create(&metrics_path),
    }
    .with_context(|| format!("opening {}", metrics_path.display()))?;
    if cfg.report_step == 0 {
        initial.save(&out.join(REPORT))?;
    }

    let mut observer = RunObserver {
        oracle: &oracle,
        out: &out,
        metrics: BufWriter::new(metrics_file),
        metrics_path: metrics_path.clone(),
        checkpoint_every,
        report_step: cfg.report_step,
        checkpoints,
    };
    let (final_policy, _) = run_adaptation(state, cfg, &mut observer)?;
    final_policy.save(&out.join(FINAL))?;
    let checkpoints = observer.checkpoints;
    drop(observer.metrics);

    let metrics_csv = if csv {
        table::metrics_to_csv(&metrics_path, &out.join(METRICS_CSV))?;
        Some(PathBuf::from(METRICS_CSV))
    } else {
        None
    };

    let manifest = RunManifest {
        dataset: data_abs,
        seed: cfg.seed,
        config: settings.clone(),
        checkpoint_every,
        artifacts: Artifacts {
            labels: LABELS.into(),
            metrics: METRICS.into(),
            metrics_csv,
            initial_policy: INITIAL.into(),
            report_policy: REPORT.into(),
            final_policy: FINAL.into(),
            checkpoints,
        },
        skipped_questions: skipped,
        resumed_from_step: resume_point.map(|(s, _)| s),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let tmp = out.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::rename(&tmp, &manifest_path)?;
    Ok(manifest)
}
