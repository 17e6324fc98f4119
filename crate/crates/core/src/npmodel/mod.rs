//! Neural-process family: CNP, LNP, ANP and the task-aware ANP with one
//! query projection per subtask.

mod checkpoint;
mod episode;
mod model;
#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use episode::{Episode, EpisodeMeta};
pub use model::{
    aggregate_mean, ForwardMode, GaussianPrediction, LatentState, Linear, Model, Model32, Model64,
    ModelIds,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cnp,
    Lnp,
    Anp,
    Taanp,
}

impl Variant {
    pub fn has_latent(self) -> bool {
        !matches!(self, Variant::Cnp)
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::Anp | Variant::Taanp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cnp => "cnp",
            Variant::Lnp => "lnp",
            Variant::Anp => "anp",
            Variant::Taanp => "taanp",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnp" => Ok(Variant::Cnp),
            "lnp" => Ok(Variant::Lnp),
            "anp" => Ok(Variant::Anp),
            "taanp" => Ok(Variant::Taanp),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Target category, derived from (segment observed?, time in history?).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubTask {
    EstimateUnobserved,
    ForecastObserved,
    ForecastUnobserved,
}

impl SubTask {
    pub const ALL: [SubTask; 3] = [
        SubTask::EstimateUnobserved,
        SubTask::ForecastObserved,
        SubTask::ForecastUnobserved,
    ];

    pub fn of(observed: bool, in_history: bool) -> Option<SubTask> {
        match (observed, in_history) {
            (false, true) => Some(SubTask::EstimateUnobserved),
            (true, false) => Some(SubTask::ForecastObserved),
            (false, false) => Some(SubTask::ForecastUnobserved),
            (true, true) => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SubTask::EstimateUnobserved => "estimate_unobserved",
            SubTask::ForecastObserved => "forecast_observed",
            SubTask::ForecastUnobserved => "forecast_unobserved",
        }
    }
}

impl fmt::Display for SubTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub rep_dim: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub sigma_floor: f64,
    /// When set, the decoder's σ head is ignored and σ is this constant.
    pub fixed_sigma: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Taanp,
            hidden: 128,
            rep_dim: 128,
            latent_dim: 64,
            heads: 4,
            dropout: 0.1,
            sigma_floor: 1e-3,
            fixed_sigma: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.rep_dim == 0 || self.latent_dim == 0 || self.heads == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !self.rep_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "rep_dim {} is not divisible by {} heads",
                self.rep_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        if self.fixed_sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("fixed_sigma must be positive".into()));
        }
        Ok(())
    }
}
