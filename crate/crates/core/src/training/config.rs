use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npmodel::{ModelConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// KL weight.
    pub beta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_episodes: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// History length T in steps.
    pub history: usize,
    /// Forecast horizon H in steps.
    pub horizon: usize,
    /// Fraction range for the KL context subset C′.
    pub context_subsample_range: (f64, f64),
    /// Fraction of observed sensors hidden as pseudo-unobserved per training episode.
    pub pseudo_unobserved_range: (f64, f64),
    pub dropout_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Share of training-period windows held out for validation.
    pub val_fraction: f64,
    /// Share of the time axis used for training (the rest is test).
    pub train_fraction: f64,
    /// Cap on training episodes per epoch; `None` uses every training window.
    pub episodes_per_epoch: Option<usize>,
    /// Cap on supervised targets per training episode.
    pub max_targets: Option<usize>,
    /// Cap on validation episodes per epoch.
    pub val_episodes: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_episodes: 16,
            max_epochs: 50,
            patience: 5,
            history: 4,
            horizon: 4,
            context_subsample_range: (0.5, 1.0),
            pseudo_unobserved_range: (0.2, 0.8),
            dropout_rate: 0.1,
            seed: 0,
            clip_norm: 5.0,
            val_fraction: 0.1,
            train_fraction: 0.6,
            episodes_per_epoch: None,
            max_targets: None,
            val_episodes: None,
        }
    }
}

fn fraction_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!("{name} must satisfy 0 < min <= max <= 1, got ({lo}, {hi})")));
    }
    Ok(())
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        fraction_range("context_subsample_range", self.context_subsample_range)?;
        fraction_range("pseudo_unobserved_range", self.pseudo_unobserved_range)?;
        if self.history < 1 || self.horizon < 1 {
            return Err(Error::Config("history and horizon must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config("lr, weight_decay must be >= 0 and eps > 0".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        if self.batch_episodes < 1 || self.max_epochs < 1 {
            return Err(Error::Config("batch_episodes and max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if [self.episodes_per_epoch, self.max_targets, self.val_episodes].contains(&Some(0)) {
            return Err(Error::Config("episode and target caps must be positive".into()));
        }
        Ok(())
    }
}

/// How predictions are produced after training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// K Monte-Carlo passes.
    Mc,
    /// One deterministic pass.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoTamqm,
    NoDropout,
    PlainDropout,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoTamqm,
        Ablation::NoDropout,
        Ablation::PlainDropout,
    ];

    /// Model and training configuration plus inference mode for this switch.
    pub fn apply(self, model: &ModelConfig, training: &TrainingConfig) -> (ModelConfig, TrainingConfig, InferenceMode) {
        let mut m = model.clone();
        let mut t = training.clone();
        m.variant = Variant::Taanp;
        let mode = match self {
            Ablation::Full => InferenceMode::Mc,
            Ablation::NoTamqm => {
                m.variant = Variant::Anp;
                InferenceMode::Mc
            }
            Ablation::NoDropout => {
                t.dropout_rate = 0.0;
                InferenceMode::Plain
            }
            Ablation::PlainDropout => InferenceMode::Plain,
        };
        m.dropout = t.dropout_rate;
        (m, t, mode)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTamqm => "no_tamqm",
            Ablation::NoDropout => "no_dropout",
            Ablation::PlainDropout => "plain_dropout",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}
