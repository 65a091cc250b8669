//! Effective settings: defaults, then a manifest or config file, then flags.
//!
//! Every layer uses the same flat key names as [`TrainConfig`]; the initial
//! policy knobs live alongside them as `format_bias`, `answer_noise`,
//! `logit_noise` and `init_seed`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use ttrl_core::advantage::WeightKind;
use ttrl_core::policy::InitParams;
use ttrl_core::trainer::TrainConfig;

const INIT_KEYS: [&str; 4] = ["format_bias", "answer_noise", "logit_noise", "init_seed"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub train: TrainConfig,
    pub init: InitParams,
}

impl Settings {
    pub fn to_table(&self) -> Result<Table> {
        let mut table = Table::try_from(&self.train)?;
        table.insert("format_bias".into(), Value::Float(self.init.format_bias));
        table.insert("answer_noise".into(), Value::Float(self.init.answer_noise));
        table.insert("logit_noise".into(), Value::Float(self.init.logit_noise));
        table.insert("init_seed".into(), Value::Integer(to_i64(self.init.seed, "init_seed")?));
        Ok(table)
    }

    pub fn from_table(mut table: Table) -> Result<Self> {
        let mut init = Table::new();
        for key in INIT_KEYS {
            if let Some(v) = table.remove(key) {
                let name = if key == "init_seed" { "seed" } else { key };
                init.insert(name.into(), v);
            }
        }
        let train: TrainConfig = Value::Table(table).try_into().context("invalid training setting")?;
        let init: InitParams = Value::Table(init)
            .try_into()
            .context("invalid initial-policy setting")?;
        train.validate()?;
        Ok(Self { train, init })
    }
}

fn to_i64(v: u64, name: &str) -> Result<i64> {
    i64::try_from(v).with_context(|| format!("`{name}` = {v} is too large for the config format"))
}

/// Reads a flat TOML config file.
pub fn read_config(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
        bail!(
            "config {}: `{k}` must be a scalar; the format is flat key = value",
            path.display()
        );
    }
    Ok(table)
}

/// Overrides for every setting; names mirror the config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct SettingFlags {
    /// Votes per question for the pseudo-label.
    #[arg(long)]
    pub m_votes: Option<u32>,
    /// Rollouts per group.
    #[arg(long)]
    pub g_rollouts: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Questions per step.
    #[arg(long)]
    pub global_batch: Option<usize>,
    /// Step whose snapshot is kept as the reported result.
    #[arg(long)]
    pub report_step: Option<usize>,
    /// Confidence weighting: linear, sqrt, exp or off.
    #[arg(long, visible_alias = "weight")]
    pub weight_kind: Option<WeightKind>,
    /// Sampling attempts per group; 1 disables resampling.
    #[arg(long, visible_alias = "mas")]
    pub mas_attempts: Option<usize>,
    #[arg(long, value_parser = ["eager", "lazy"])]
    pub attempt_mode: Option<String>,
    /// Re-vote pseudo-labels at every pass over the data.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub refresh_labels: Option<bool>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub inner_epochs: Option<usize>,
    #[arg(long)]
    pub accumulation_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub format_bias: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub answer_noise: Option<f64>,
    #[arg(long)]
    pub logit_noise: Option<f64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
}

impl SettingFlags {
    pub fn apply(&self, table: &mut Table) -> Result<()> {
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                table.insert(key.into(), v);
            }
        };
        let int = |v: Option<usize>| v.map(|x| Value::Integer(x as i64));
        let float = |v: Option<f64>| v.map(Value::Float);
        set("m_votes", self.m_votes.map(|x| Value::Integer(x.into())));
        set("g_rollouts", int(self.g_rollouts));
        set("temperature", float(self.temperature));
        set("steps", int(self.steps));
        set("global_batch", int(self.global_batch));
        set("report_step", int(self.report_step));
        set("weight_kind", self.weight_kind.map(|w| Value::String(w.name().into())));
        set("mas_attempts", int(self.mas_attempts));
        set("attempt_mode", self.attempt_mode.clone().map(Value::String));
        set("refresh_labels", self.refresh_labels.map(Value::Boolean));
        set("epsilon", float(self.epsilon));
        set("beta", float(self.beta));
        set("learning_rate", float(self.learning_rate));
        set("inner_epochs", int(self.inner_epochs));
        set("accumulation_steps", int(self.accumulation_steps));
        set("format_bias", float(self.format_bias));
        set("answer_noise", float(self.answer_noise));
        set("logit_noise", float(self.logit_noise));
        if let Some(s) = self.seed {
            table.insert("seed".into(), Value::Integer(to_i64(s, "seed")?));
        }
        if let Some(s) = self.init_seed {
            table.insert("init_seed".into(), Value::Integer(to_i64(s, "init_seed")?));
        }
        Ok(())
    }
}

/// Layers `base`, an optional config file and the flags.
pub fn resolve(base: &Settings, config: Option<&Path>, flags: &SettingFlags) -> Result<Settings> {
    let mut table = base.to_table()?;
    if let Some(path) = config {
        table.extend(read_config(path)?);
    }
    flags.apply(&mut table)?;
    Settings::from_table(table)
}
