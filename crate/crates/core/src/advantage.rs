//! Group-normalised, confidence-weighted advantages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TtrlError};

/// Shape of the confidence weight `f(conf)`. All three satisfy `f(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Linear,
    Sqrt,
    /// `e^(conf - 1)`
    Exp,
    /// No weighting (`f = 1`).
    Off,
}

impl WeightKind {
    pub const ALL: [WeightKind; 4] = [WeightKind::Linear, WeightKind::Sqrt, WeightKind::Exp, WeightKind::Off];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Linear => "linear",
            WeightKind::Sqrt => "sqrt",
            WeightKind::Exp => "exp",
            WeightKind::Off => "off",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKind {
    type Err = TtrlError;

    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TtrlError::invalid("weight_kind", format!("`{s}` is not one of linear, sqrt, exp, off")))
    }
}

pub fn weight_fn(kind: WeightKind, conf: f64) -> Result<f64> {
    if !(conf > 0.0 && conf <= 1.0) {
        return Err(TtrlError::invalid("conf", format!("{conf} not in (0, 1]")));
    }
    Ok(match kind {
        WeightKind::Linear => conf,
        WeightKind::Sqrt => conf.sqrt(),
        WeightKind::Exp => (conf - 1.0).exp(),
        WeightKind::Off => 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub values: Vec<f64>,
    /// Every reward in the group was equal.
    pub collapse_flag: bool,
}

/// `(r - mean) / std * f(conf)` with the population standard deviation. A
/// zero-spread group yields all-zero advantages and sets the collapse flag.
pub fn compute_advantages(rewards: &[f64], conf: f64, kind: WeightKind) -> Result<AdvantageGroup> {
    let g = rewards.len();
    if g < 2 {
        return Err(TtrlError::invalid("rewards", format!("group of {g}; need at least 2")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(TtrlError::NonFinite("rewards"));
    }
    let weight = weight_fn(kind, conf)?;
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(AdvantageGroup {
            values: vec![0.0; g],
            collapse_flag: true,
        });
    }
    let std = var.sqrt();
    Ok(AdvantageGroup {
        values: rewards.iter().map(|r| (r - mean) / std * weight).collect(),
        collapse_flag: false,
    })
}
