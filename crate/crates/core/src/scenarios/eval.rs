use diffcore::{mix64, Scalar};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{r2, rmse, rrmse, MaskedSeries, MetricReport, Outcome, ScoreConfig};
use crate::npmodel::{Model, SubTask};
use crate::synthworld::{FeatureMask, World};
use crate::training::{build_episode, EpisodeLayout, InferenceMode};
use crate::uncertainty::{mc_infer, plain_infer, Mixture, PredictiveMode, DEFAULT_K};

/// How predictive distributions are formed at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSpec {
    pub mode: InferenceMode,
    /// Monte-Carlo passes (ignored in plain mode).
    pub k: usize,
    pub predictive: PredictiveMode,
    pub seed: u64,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        Self {
            mode: InferenceMode::Mc,
            k: DEFAULT_K,
            predictive: PredictiveMode::Mixture,
            seed: 0,
        }
    }
}

/// One scored target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetOutcome {
    pub task: SubTask,
    pub segment: usize,
    pub t: usize,
    /// `t − t0`: ≤ 0 in the history window, 1..=H in the horizon.
    pub lead: i64,
    pub y: Option<f64>,
    pub predictive: Mixture,
}

/// Windowing used for evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalWindowing {
    pub history: usize,
    pub horizon: usize,
    pub mask: FeatureMask,
}

/// Predict every target of every window under `layout`. MC passes for window
/// `t0` use seed `mix64(spec.seed ^ t0)`, so results do not depend on the
/// order or subset of windows evaluated.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    world: &World,
    layout: &EpisodeLayout,
    windows: &[usize],
    win: EvalWindowing,
    spec: InferenceSpec,
) -> Result<Vec<TargetOutcome>> {
    if spec.mode == InferenceMode::Mc && spec.k < 1 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &t0 in windows {
        let Some(ep) = build_episode(world, layout, t0, win.history, win.horizon, win.mask)? else {
            continue;
        };
        let set = match spec.mode {
            InferenceMode::Mc => mc_infer(model, &ep, spec.k, mix64(spec.seed ^ t0 as u64))?,
            InferenceMode::Plain => plain_infer(model, &ep)?,
        };
        for i in 0..ep.n_targets() {
            let (segment, t) = ep.meta.target_at[i];
            out.push(TargetOutcome {
                task: ep.target_tasks()[i],
                segment,
                t,
                lead: t as i64 - t0 as i64,
                y: ep.target_y()[i],
                predictive: spec.predictive.apply(set.mixture(i)),
            });
        }
    }
    Ok(out)
}

fn score<'a>(items: impl Iterator<Item = &'a TargetOutcome>, cfg: ScoreConfig) -> Result<MetricReport> {
    let outs: Vec<Outcome> = items
        .map(|o| Outcome {
            y: o.y.unwrap_or(f64::NAN),
            valid: o.y.is_some(),
            predictive: &o.predictive,
        })
        .collect();
    MetricReport::score(&outs, cfg)
}

/// Exactly one report per subtask, in the fixed subtask order.
pub fn task_reports(outcomes: &[TargetOutcome], cfg: ScoreConfig) -> Result<Vec<MetricReport>> {
    SubTask::ALL
        .iter()
        .map(|&task| Ok(score(outcomes.iter().filter(|o| o.task == task), cfg)?.with_task(task.name())))
        .collect()
}

/// Forecast subtasks split by lead step 1..=H.
pub fn horizon_reports(outcomes: &[TargetOutcome], horizon: usize, cfg: ScoreConfig) -> Result<Vec<MetricReport>> {
    let mut out = Vec::new();
    for task in [SubTask::ForecastObserved, SubTask::ForecastUnobserved] {
        for h in 1..=horizon {
            let items = outcomes.iter().filter(|o| o.task == task && o.lead == h as i64);
            out.push(score(items, cfg)?.with_task(task.name()).with_horizon(h));
        }
    }
    Ok(out)
}

/// Scores over any subset, e.g. all targets at held-out segments.
pub fn report_for<'a>(items: impl Iterator<Item = &'a TargetOutcome>, cfg: ScoreConfig) -> Result<MetricReport> {
    score(items, cfg)
}

/// Truth and mixture-mean predictions of the valid outcomes.
pub fn point_pairs(outcomes: &[TargetOutcome]) -> (Vec<f64>, Vec<f64>) {
    outcomes
        .iter()
        .filter_map(|o| o.y.map(|y| (y, o.predictive.mean())))
        .unzip()
}

/// `(R², RMSE, RRMSE)` over all valid outcomes.
pub fn point_scores(outcomes: &[TargetOutcome]) -> Result<(f64, f64, f64)> {
    let (y, p) = point_pairs(outcomes);
    let s = MaskedSeries::new(&y, &p);
    Ok((r2(&s)?, rmse(&s)?, rrmse(&s)?))
}
