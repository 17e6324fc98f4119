use diffcore::Scalar;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, task_reports, EvalWindowing, InferenceSpec};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, ScoreConfig};
use crate::npmodel::{Model, ModelConfig};
use crate::synthworld::{assign_sensors, FeatureMask, SensorAssignment, World, FEATURE_DIM};
use crate::training::{EpisodeLayout, EpisodeSampler, TrainState, TrainingConfig};

/// Model and training configuration for runs that train from scratch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

/// At most `cap` windows, evenly spaced.
pub fn spaced_windows(all: &[usize], cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < all.len() => (0..c).map(|i| all[i * all.len() / c]).collect(),
        _ => all.to_vec(),
    }
}

/// Train a fresh model on `sensors` with `seed` as both init and run seed.
/// The model's dropout follows the training config.
pub fn fit<S: Scalar>(
    world: &World,
    sensors: &SensorAssignment,
    mask: FeatureMask,
    setup: &TrainSetup,
    seed: u64,
) -> Result<(Model<S>, TrainState<S>)> {
    let training = TrainingConfig {
        seed,
        ..setup.training.clone()
    };
    let sampler = EpisodeSampler::new(world, sensors.clone(), &training, mask)?;
    let model_cfg = ModelConfig {
        dropout: training.dropout_rate,
        ..setup.model.clone()
    };
    let model = Model::<S>::new(model_cfg, FEATURE_DIM, sampler.flow_scale(), seed)?;
    let mut state = TrainState::new(model, &training)?;
    state.run(&sampler, &training, |_| {})?;
    Ok((state.best.clone(), state))
}

/// Per-subtask test reports of a model trained and evaluated on one split.
pub fn fit_and_score(
    world: &World,
    sensors: &SensorAssignment,
    mask: FeatureMask,
    setup: &TrainSetup,
    spec: InferenceSpec,
    eval_cap: Option<usize>,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    let (model, _) = fit::<f32>(world, sensors, mask, setup, seed)?;
    let sampler = EpisodeSampler::new(world, sensors.clone(), &setup.training, mask)?;
    let windows = spaced_windows(sampler.test_windows(), eval_cap);
    let win = EvalWindowing {
        history: setup.training.history,
        horizon: setup.training.horizon,
        mask,
    };
    let spec = InferenceSpec { seed, ..spec };
    let outcomes = evaluate(&model, world, &EpisodeLayout::from_sensors(sensors), &windows, win, spec)?;
    task_reports(&outcomes, ScoreConfig::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub seed: u64,
    pub reports: Vec<MetricReport>,
}

/// For each ratio and seed: split sensors with that seed, train, score.
pub fn run_density_sweep(
    world: &World,
    ratios: &[f64],
    seeds: &[u64],
    setup: &TrainSetup,
    spec: InferenceSpec,
    eval_cap: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::Config(format!("unobserved ratio {r} not in (0, 1)")));
    }
    let mut out = Vec::with_capacity(ratios.len() * seeds.len());
    for &ratio in ratios {
        for &seed in seeds {
            let sensors = assign_sensors(world.n_segments(), ratio, seed)?;
            let reports = fit_and_score(world, &sensors, FeatureMask::NONE, setup, spec, eval_cap, seed)?;
            out.push(SweepPoint { ratio, seed, reports });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub drop: String,
    pub seed: u64,
    pub reports: Vec<MetricReport>,
}

/// Train and score once per feature mask and seed; the sensor split for a
/// seed is shared by all masks.
pub fn run_fcd_ablation(
    world: &World,
    masks: &[FeatureMask],
    seeds: &[u64],
    unobserved_ratio: f64,
    setup: &TrainSetup,
    spec: InferenceSpec,
    eval_cap: Option<usize>,
) -> Result<Vec<AblationPoint>> {
    let mut out = Vec::with_capacity(masks.len() * seeds.len());
    for &seed in seeds {
        let sensors = assign_sensors(world.n_segments(), unobserved_ratio, seed)?;
        for &mask in masks {
            let reports = fit_and_score(world, &sensors, mask, setup, spec, eval_cap, seed)?;
            out.push(AblationPoint {
                drop: mask.label().to_string(),
                seed,
                reports,
            });
        }
    }
    Ok(out)
}
