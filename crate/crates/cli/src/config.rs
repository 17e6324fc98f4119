use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taanp::metrics::ScoreConfig;
use taanp::npmodel::{ModelConfig, Variant};
use taanp::scenarios::{InferenceSpec, LifecycleSchedule, PlacementKind, Stage};
use taanp::synthworld::{FeatureMask, WorldConfig};
use taanp::training::{Ablation, InferenceMode, TrainingConfig};
use taanp::uncertainty::PredictiveMode;

use crate::error::CliError;

/// Everything a run depends on. The output directory is deliberately not
/// part of it, so a snapshot hashes the same wherever it is replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed: model init, training streams, sensor-free inference and scenarios.
    pub seed: u64,
    /// Seed of the fixed/virtual sensor split.
    pub sensor_seed: u64,
    pub unobserved_ratio: f64,
    /// Dataset directory; the world is generated from `[world]` when absent.
    pub data: Option<PathBuf>,
    /// Model checkpoint for eval and the scenario commands.
    pub checkpoint: Option<PathBuf>,
    /// Training state to resume from.
    pub resume: Option<PathBuf>,
    pub ablation: Option<Ablation>,
    /// Comma-separated FCD features zeroed at train and test time.
    pub fcd_drop: String,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub uncertainty: UncertaintySection,
    pub eval: EvalSection,
    pub placement: PlacementSection,
    pub lifecycle: LifecycleSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sensor_seed: 0,
            unobserved_ratio: 0.6,
            data: None,
            checkpoint: None,
            resume: None,
            ablation: None,
            fcd_drop: String::new(),
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            uncertainty: UncertaintySection::default(),
            eval: EvalSection::default(),
            placement: PlacementSection::default(),
            lifecycle: LifecycleSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    pub mode: InferenceMode,
    pub k: usize,
    pub predictive: PredictiveMode,
    pub alpha: f64,
    pub qice_bins: usize,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        let s = InferenceSpec::default();
        let c = ScoreConfig::default();
        Self {
            mode: s.mode,
            k: s.k,
            predictive: s.predictive,
            alpha: c.alpha,
            qice_bins: c.qice_bins,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Cap on evaluation windows, evenly spaced over the test period.
    pub max_windows: Option<usize>,
    /// PCV bin edges in percent; no PCV records when empty.
    pub pcv_edges: Vec<f64>,
    /// Rejected fractions for the error-rejection curve; none when empty.
    pub rejection: Vec<f64>,
    /// Penetration bin edges for per-segment RRMSE at held-out segments.
    pub penetration_edges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSection {
    pub strategies: Vec<PlacementKind>,
    pub batch_size: usize,
    pub rounds: usize,
    pub seeds: Vec<u64>,
}

impl Default for PlacementSection {
    fn default() -> Self {
        Self {
            strategies: PlacementKind::ALL.to_vec(),
            batch_size: 4,
            rounds: 8,
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleSection {
    /// Explicit stages; when absent, damage/repair/add for `stage_days`
    /// each at `per_day` events (default ceil(5% of observed)).
    pub stages: Option<Vec<Stage>>,
    pub stage_days: usize,
    pub per_day: Option<usize>,
}

impl Default for LifecycleSection {
    fn default() -> Self {
        Self {
            stages: None,
            stage_days: 3,
            per_day: None,
        }
    }
}

impl LifecycleSection {
    pub fn schedule(&self, observed: usize) -> LifecycleSchedule {
        match &self.stages {
            Some(stages) => LifecycleSchedule { stages: stages.clone() },
            None => LifecycleSchedule::damage_repair_add(
                self.stage_days,
                self.per_day.unwrap_or_else(|| LifecycleSchedule::desk_per_day(observed)),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// FCD ablation masks (e.g. "", "fcd_speed", "fcd_flow"); skipped when empty.
    pub fcd_drops: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: (1..=9).map(|i| i as f64 / 10.0).collect(),
            seeds: vec![0],
            fcd_drops: Vec::new(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub k_samples: Option<usize>,
    pub ablation: Option<Ablation>,
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| taanp::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply overrides and derived settings, then validate.
    pub fn resolve(mut self, command: &str, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            if command == "synth" {
                self.world.seed = seed;
            } else {
                self.seed = seed;
            }
        }
        if o.variant.is_some() && (o.ablation.is_some() || self.ablation.is_some()) {
            return Err(CliError::Config("--variant conflicts with an ablation setting".into()));
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(k) = o.k_samples {
            self.uncertainty.k = k;
        }
        if let Some(a) = o.ablation {
            self.ablation = Some(a);
        }
        if let Some(r) = &o.resume {
            self.resume = Some(r.clone());
        }
        self.training.seed = self.seed;
        if let Some(a) = self.ablation {
            let (m, t, mode) = a.apply(&self.model, &self.training);
            self.model = m;
            self.training = t;
            self.uncertainty.mode = mode;
        }
        self.model.dropout = self.training.dropout_rate;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.training.validate()?;
        self.feature_mask()?;
        if !(self.unobserved_ratio > 0.0 && self.unobserved_ratio < 1.0) {
            return Err(CliError::Config("unobserved_ratio must lie in (0, 1)".into()));
        }
        if self.uncertainty.k < 1 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if !(self.uncertainty.alpha > 0.0 && self.uncertainty.alpha < 1.0) || self.uncertainty.qice_bins < 1 {
            return Err(CliError::Config("alpha must lie in (0, 1) and qice_bins be positive".into()));
        }
        if self.eval.max_windows == Some(0) {
            return Err(CliError::Config("eval.max_windows must be positive".into()));
        }
        if self.placement.batch_size < 1 || self.placement.seeds.is_empty() || self.placement.strategies.is_empty() {
            return Err(CliError::Config(
                "placement needs batch_size ≥ 1, a strategy and a seed".into(),
            ));
        }
        if self.sweep.seeds.is_empty() {
            return Err(CliError::Config("sweep needs at least one seed".into()));
        }
        for d in &self.sweep.fcd_drops {
            FeatureMask::parse(d)?;
        }
        Ok(())
    }

    pub fn feature_mask(&self) -> Result<FeatureMask, CliError> {
        Ok(FeatureMask::parse(&self.fcd_drop)?)
    }

    pub fn inference(&self) -> InferenceSpec {
        InferenceSpec {
            mode: self.uncertainty.mode,
            k: self.uncertainty.k,
            predictive: self.uncertainty.predictive,
            seed: self.seed,
        }
    }

    pub fn scoring(&self) -> ScoreConfig {
        ScoreConfig {
            alpha: self.uncertainty.alpha,
            qice_bins: self.uncertainty.qice_bins,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }
}
