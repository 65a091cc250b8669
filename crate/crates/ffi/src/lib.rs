//! C ABI over `ttrl-core`.
//!
//! Datasets and policies are opaque handles created and freed through this
//! API. Every fallible function returns a [`TtrlStatus`]; on failure the
//! message is available from [`ttrl_last_error`] on the same thread. Panics
//! are caught at the boundary and reported as `TTRL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ttrl_core::advantage::{compute_advantages, weight_fn, WeightKind};
use ttrl_core::env::{generate_dataset, Dataset, GenParams};
use ttrl_core::evaluation::{greedy_accuracy, label_answers, run_baselines, OracleObserver};
use ttrl_core::grpo::GrpoConfig;
use ttrl_core::policy::{init_policy, InitParams, PolicyParameters};
use ttrl_core::sampling::AttemptMode;
use ttrl_core::trainer::{run_adaptation, run_pseudo_label_phase, AdaptationState, MetricsRecord, TrainConfig};
use ttrl_core::TtrlError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    ShapeMismatch = 4,
    NonFinite = 5,
    AllSkipped = 6,
    Parse = 7,
    Io = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtrlWeightKind {
    Linear = 0,
    Sqrt = 1,
    Exp = 2,
    Off = 3,
}

impl From<TtrlWeightKind> for WeightKind {
    fn from(k: TtrlWeightKind) -> Self {
        match k {
            TtrlWeightKind::Linear => WeightKind::Linear,
            TtrlWeightKind::Sqrt => WeightKind::Sqrt,
            TtrlWeightKind::Exp => WeightKind::Exp,
            TtrlWeightKind::Off => WeightKind::Off,
        }
    }
}

/// Opaque dataset handle; includes the hidden answers for evaluation.
pub struct TtrlDataset(Dataset);

/// Opaque policy handle.
pub struct TtrlPolicy(PolicyParameters);

/// Initial-policy knobs; see [`ttrl_init_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TtrlInitParams {
    pub format_bias: f64,
    pub answer_noise: f64,
    pub logit_noise: f64,
    pub seed: u64,
}

/// Training settings; see [`ttrl_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TtrlTrainConfig {
    pub m_votes: u32,
    pub g_rollouts: usize,
    pub temperature: f64,
    pub steps: usize,
    pub global_batch: usize,
    pub report_step: usize,
    pub weight_kind: TtrlWeightKind,
    pub mas_attempts: usize,
    /// Stop drawing attempts at the first non-uniform group.
    pub lazy_attempts: bool,
    pub refresh_labels: bool,
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub inner_epochs: usize,
    pub accumulation_steps: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TtrlBaselines {
    pub di: f64,
    pub dimv: f64,
}

/// Oracle accuracies of a [`ttrl_train`] call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TtrlTrainSummary {
    pub steps_run: usize,
    pub skipped_questions: usize,
    pub pseudo_label_accuracy: f64,
    pub report_accuracy: f64,
    pub final_accuracy: f64,
}

impl From<TtrlInitParams> for InitParams {
    fn from(p: TtrlInitParams) -> Self {
        InitParams {
            format_bias: p.format_bias,
            answer_noise: p.answer_noise,
            logit_noise: p.logit_noise,
            seed: p.seed,
        }
    }
}

impl From<TtrlTrainConfig> for TrainConfig {
    fn from(c: TtrlTrainConfig) -> Self {
        TrainConfig {
            m_votes: c.m_votes,
            g_rollouts: c.g_rollouts,
            temperature: c.temperature,
            steps: c.steps,
            global_batch: c.global_batch,
            report_step: c.report_step,
            weight_kind: c.weight_kind.into(),
            mas_attempts: c.mas_attempts,
            attempt_mode: if c.lazy_attempts {
                AttemptMode::Lazy
            } else {
                AttemptMode::Eager
            },
            refresh_labels: c.refresh_labels,
            grpo: GrpoConfig {
                epsilon: c.epsilon,
                beta: c.beta,
                learning_rate: c.learning_rate,
                inner_epochs: c.inner_epochs,
                accumulation_steps: c.accumulation_steps,
            },
            seed: c.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TtrlStatus, String);

impl From<TtrlError> for Failure {
    fn from(e: TtrlError) -> Self {
        let status = match &e {
            TtrlError::InvalidArgument { .. } | TtrlError::UnknownQuestion(_) | TtrlError::SnapshotMismatch { .. } => {
                TtrlStatus::InvalidArgument
            }
            TtrlError::LengthMismatch { .. } => TtrlStatus::LengthMismatch,
            TtrlError::ShapeMismatch(_) => TtrlStatus::ShapeMismatch,
            TtrlError::NonFinite(_) => TtrlStatus::NonFinite,
            TtrlError::AllSkipped => TtrlStatus::AllSkipped,
            TtrlError::Parse { .. } => TtrlStatus::Parse,
            TtrlError::Io { .. } => TtrlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TtrlStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status and last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TtrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtrlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            TtrlStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(TtrlStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ttrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ttrl_init_params_default() -> TtrlInitParams {
    let d = InitParams::default();
    TtrlInitParams {
        format_bias: d.format_bias,
        answer_noise: d.answer_noise,
        logit_noise: d.logit_noise,
        seed: d.seed,
    }
}

#[no_mangle]
pub extern "C" fn ttrl_train_config_default() -> TtrlTrainConfig {
    let d = TrainConfig::default();
    TtrlTrainConfig {
        m_votes: d.m_votes,
        g_rollouts: d.g_rollouts,
        temperature: d.temperature,
        steps: d.steps,
        global_batch: d.global_batch,
        report_step: d.report_step,
        weight_kind: TtrlWeightKind::Exp,
        mas_attempts: d.mas_attempts,
        lazy_attempts: d.attempt_mode == AttemptMode::Lazy,
        refresh_labels: d.refresh_labels,
        epsilon: d.grpo.epsilon,
        beta: d.grpo.beta,
        learning_rate: d.grpo.learning_rate,
        inner_epochs: d.grpo.inner_epochs,
        accumulation_steps: d.grpo.accumulation_steps,
        seed: d.seed,
    }
}

/// # Safety
/// `out` must be a valid pointer to a `TtrlDataset*`.
#[no_mangle]
pub unsafe extern "C" fn ttrl_dataset_generate(
    n: usize,
    k: usize,
    signal: f64,
    signal_spread: f64,
    seed: u64,
    out: *mut *mut TtrlDataset,
) -> TtrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = generate_dataset(&GenParams::new(n, k, signal, seed).with_spread(signal_spread))?;
        *out = Box::into_raw(Box::new(TtrlDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid `TtrlDataset*` slot.
#[no_mangle]
pub unsafe extern "C" fn ttrl_dataset_load(path: *const c_char, out: *mut *mut TtrlDataset) -> TtrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = Dataset::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TtrlDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ttrl_dataset_save(dataset: *const TtrlDataset, path: *const c_char) -> TtrlStatus {
    guard(|| {
        let d = deref(dataset, "dataset")?;
        d.0.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of questions, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ttrl_dataset_len(dataset: *const TtrlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be NULL or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ttrl_dataset_free(dataset: *mut TtrlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must come from this library; `params` may be NULL for defaults;
/// `out` must be a valid `TtrlPolicy*` slot.
#[no_mangle]
pub unsafe extern "C" fn ttrl_policy_init(
    dataset: *const TtrlDataset,
    params: *const TtrlInitParams,
    out: *mut *mut TtrlPolicy,
) -> TtrlStatus {
    guard(|| {
        let d = deref(dataset, "dataset")?;
        let out = out_ref(out, "out")?;
        let params = params.as_ref().copied().unwrap_or_else(|| ttrl_init_params_default());
        let p = init_policy(&d.0, &params.into())?;
        *out = Box::into_raw(Box::new(TtrlPolicy(p)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` a valid `TtrlPolicy*` slot.
#[no_mangle]
pub unsafe extern "C" fn ttrl_policy_load(path: *const c_char, out: *mut *mut TtrlPolicy) -> TtrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = PolicyParameters::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TtrlPolicy(p)));
        Ok(())
    })
}

/// Writes the bit-exact text checkpoint.
///
/// # Safety
/// `policy` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ttrl_policy_save(policy: *const TtrlPolicy, path: *const c_char) -> TtrlStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        p.0.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of updates applied since initialisation, or 0 for NULL.
///
/// # Safety
/// `policy` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ttrl_policy_snapshot_id(policy: *const TtrlPolicy) -> u64 {
    policy.as_ref().map_or(0, |p| p.0.snapshot_id)
}

/// # Safety
/// `policy` must be NULL or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ttrl_policy_free(policy: *mut TtrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Greedy-answer accuracy of `policy` on `dataset`.
///
/// # Safety
/// Handles must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ttrl_eval_accuracy(
    policy: *const TtrlPolicy,
    dataset: *const TtrlDataset,
    out: *mut f64,
) -> TtrlStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let d = deref(dataset, "dataset")?;
        *out_ref(out, "out")? = greedy_accuracy(&p.0, &d.0.oracle())?;
        Ok(())
    })
}

/// Direct-inference and majority-vote accuracy.
///
/// # Safety
/// Handles must come from this library; `config` may be NULL for defaults;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ttrl_baselines(
    policy: *const TtrlPolicy,
    dataset: *const TtrlDataset,
    config: *const TtrlTrainConfig,
    out: *mut TtrlBaselines,
) -> TtrlStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let d = deref(dataset, "dataset")?;
        let out = out_ref(out, "out")?;
        let cfg: TrainConfig = config
            .as_ref()
            .copied()
            .unwrap_or_else(|| ttrl_train_config_default())
            .into();
        let b = run_baselines(&p.0, &d.0, &cfg)?;
        *out = TtrlBaselines { di: b.di, dimv: b.dimv };
        Ok(())
    })
}

/// Pseudo-labels `dataset` with `policy`, adapts a copy of it, and returns
/// the adapted policy in `out_policy`. The answers in `dataset` are used
/// only for the accuracies in `out_summary`. When `metrics_path` is not NULL
/// one JSON record per step is written there.
///
/// # Safety
/// Handles must come from this library; `config` may be NULL for defaults;
/// `metrics_path` may be NULL or NUL-terminated; `out_summary` may be NULL;
/// `out_policy` must be a valid `TtrlPolicy*` slot.
#[no_mangle]
pub unsafe extern "C" fn ttrl_train(
    policy: *const TtrlPolicy,
    dataset: *const TtrlDataset,
    config: *const TtrlTrainConfig,
    metrics_path: *const c_char,
    out_policy: *mut *mut TtrlPolicy,
    out_summary: *mut TtrlTrainSummary,
) -> TtrlStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let d = deref(dataset, "dataset")?;
        let out_policy = out_ref(out_policy, "out_policy")?;
        let cfg: TrainConfig = config
            .as_ref()
            .copied()
            .unwrap_or_else(|| ttrl_train_config_default())
            .into();
        let mut metrics = match metrics_path.is_null() {
            true => None,
            false => {
                let path = path_arg(metrics_path, "metrics_path")?;
                let f = File::create(&path).map_err(|e| Failure(TtrlStatus::Io, format!("{}: {e}", path.display())))?;
                Some((path, BufWriter::new(f)))
            }
        };
        let oracle = d.0.oracle();
        let labeled = run_pseudo_label_phase(&p.0, &d.0.unlabeled(), &cfg)?;
        let mut summary = TtrlTrainSummary {
            skipped_questions: labeled.skipped_count(),
            pseudo_label_accuracy: oracle.accuracy(&label_answers(&labeled.labels))?,
            report_accuracy: greedy_accuracy(&p.0, &oracle)?,
            ..Default::default()
        };
        let report_step = cfg.report_step;
        let mut observer = OracleObserver::with_callback(&oracle, |rec: &MetricsRecord, _: &PolicyParameters| {
            if rec.step == report_step {
                summary.report_accuracy = rec.eval_accuracy.unwrap_or(f64::NAN);
            }
            if let Some((path, w)) = metrics.as_mut() {
                let line = serde_json::to_string(rec).expect("metrics records serialise") + "\n";
                w.write_all(line.as_bytes()).map_err(|source| TtrlError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            Ok(())
        });
        let (adapted, records) = run_adaptation(AdaptationState::new(p.0.clone(), labeled), &cfg, &mut observer)?;
        if let Some((path, mut w)) = metrics {
            w.flush()
                .map_err(|e| Failure(TtrlStatus::Io, format!("{}: {e}", path.display())))?;
        }
        summary.steps_run = records.len();
        summary.final_accuracy = greedy_accuracy(&adapted, &oracle)?;
        if let Some(s) = out_summary.as_mut() {
            *s = summary;
        }
        *out_policy = Box::into_raw(Box::new(TtrlPolicy(adapted)));
        Ok(())
    })
}

/// Confidence weight `f(conf)` for `conf` in (0, 1].
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ttrl_weight_fn(kind: TtrlWeightKind, conf: f64, out: *mut f64) -> TtrlStatus {
    guard(|| {
        *out_ref(out, "out")? = weight_fn(kind.into(), conf)?;
        Ok(())
    })
}

/// Group-normalised advantages of `g` rewards scaled by `f(conf)`, written
/// to `out_values[0..g]`. `out_collapse` receives whether the group had no
/// spread; it may be NULL.
///
/// # Safety
/// `rewards` and `out_values` must each point to `g` doubles.
#[no_mangle]
pub unsafe extern "C" fn ttrl_compute_advantages(
    rewards: *const f64,
    g: usize,
    conf: f64,
    kind: TtrlWeightKind,
    out_values: *mut f64,
    out_collapse: *mut bool,
) -> TtrlStatus {
    guard(|| {
        if rewards.is_null() {
            return Err(null("rewards"));
        }
        if out_values.is_null() {
            return Err(null("out_values"));
        }
        let rewards = std::slice::from_raw_parts(rewards, g);
        let adv = compute_advantages(rewards, conf, kind.into())?;
        std::slice::from_raw_parts_mut(out_values, g).copy_from_slice(&adv.values);
        if let Some(c) = out_collapse.as_mut() {
            *c = adv.collapse_flag;
        }
        Ok(())
    })
}
