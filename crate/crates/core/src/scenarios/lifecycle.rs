use std::collections::VecDeque;
use std::fmt;

use diffcore::{RngStream, Scalar};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, point_scores, EvalWindowing, InferenceSpec};
use super::STREAM_LIFECYCLE;
use crate::error::{Error, Result};
use crate::metrics::retention_ratio;
use crate::npmodel::Model;
use crate::synthworld::{SensorAssignment, World};
use crate::training::EpisodeLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Damage,
    Repair,
    Add,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Damage => "damage",
            StageKind::Repair => "repair",
            StageKind::Add => "add",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub kind: StageKind,
    pub days: usize,
    pub per_day: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleSchedule {
    pub stages: Vec<Stage>,
}

impl LifecycleSchedule {
    /// Damage, repair and addition for `days` each, `per_day` events a day.
    pub fn damage_repair_add(days: usize, per_day: usize) -> Self {
        let stage = |kind| Stage { kind, days, per_day };
        Self {
            stages: vec![stage(StageKind::Damage), stage(StageKind::Repair), stage(StageKind::Add)],
        }
    }

    /// `ceil(5% of observed)` events per day.
    pub fn desk_per_day(observed: usize) -> usize {
        (observed * 5).div_ceil(100).max(1)
    }

    pub fn total_days(&self) -> usize {
        self.stages.iter().map(|s| s.days).sum()
    }

    /// Check the schedule against the initial sensing state before running.
    pub fn validate(&self, initial: &SensorAssignment) -> Result<()> {
        let mut observed = initial.observed().len();
        let mut damaged = 0usize;
        let mut fresh = initial.unobserved().len();
        for (i, s) in self.stages.iter().enumerate() {
            let n = s.days * s.per_day;
            match s.kind {
                StageKind::Damage => {
                    if n >= observed {
                        return Err(Error::Config(format!(
                            "stage {i}: damaging {n} of {observed} sensors leaves none"
                        )));
                    }
                    observed -= n;
                    damaged += n;
                }
                StageKind::Repair => {
                    if n > damaged {
                        return Err(Error::Config(format!(
                            "stage {i}: {n} repairs exceed {damaged} damaged sensors"
                        )));
                    }
                    observed += n;
                    damaged -= n;
                }
                StageKind::Add => {
                    // Damaged segments are unobserved but not eligible for addition.
                    if n + 1 > fresh {
                        return Err(Error::Config(format!(
                            "stage {i}: {n} additions exceed the {} never-instrumented segments that may be used",
                            fresh.saturating_sub(1)
                        )));
                    }
                    observed += n;
                    fresh -= n;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleDay {
    pub day: usize,
    /// `None` for the undisturbed baseline row.
    pub stage: Option<StageKind>,
    pub events: Vec<u32>,
    pub observed: usize,
    pub damaged: usize,
    pub rrmse: f64,
    pub retention: f64,
    pub param_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleReport {
    pub seed: u64,
    pub days: Vec<LifecycleDay>,
}

/// Mutable sensing state with a FIFO repair queue.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingState {
    n_segments: usize,
    observed: Vec<usize>,
    damaged: VecDeque<usize>,
    /// Segments never instrumented so far.
    fresh: Vec<usize>,
}

impl SensingState {
    pub fn new(initial: &SensorAssignment) -> Self {
        Self {
            n_segments: initial.n_segments(),
            observed: initial.observed().to_vec(),
            damaged: VecDeque::new(),
            fresh: initial.unobserved(),
        }
    }

    pub fn assignment(&self) -> Result<SensorAssignment> {
        SensorAssignment::from_observed(self.n_segments, self.observed.clone())
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn damaged(&self) -> usize {
        self.damaged.len()
    }

    /// Remove `k` uniformly chosen working sensors.
    pub fn damage(&mut self, k: usize, rng: &mut RngStream) -> Vec<usize> {
        let mut pick = rng.choose_indices(self.observed.len(), k);
        pick.sort_unstable_by(|a, b| b.cmp(a));
        let victims: Vec<usize> = pick.into_iter().map(|i| self.observed.remove(i)).collect();
        self.damaged.extend(&victims);
        victims
    }

    /// Restore the `k` earliest-damaged sensors.
    pub fn repair(&mut self, k: usize) -> Vec<usize> {
        let back: Vec<usize> = (0..k).filter_map(|_| self.damaged.pop_front()).collect();
        self.observed.extend(&back);
        self.observed.sort_unstable();
        back
    }

    /// Instrument `k` uniformly chosen never-instrumented segments.
    pub fn add(&mut self, k: usize, rng: &mut RngStream) -> Vec<usize> {
        let mut pick = rng.choose_indices(self.fresh.len(), k);
        pick.sort_unstable_by(|a, b| b.cmp(a));
        let new: Vec<usize> = pick.into_iter().map(|i| self.fresh.remove(i)).collect();
        self.observed.extend(&new);
        self.observed.sort_unstable();
        new
    }
}

/// Day 0 is the undisturbed baseline. Each later day applies its events at
/// the start of the day and scores the same evaluation windows, so the
/// retention ratio isolates the sensing change. The model is never updated.
#[allow(clippy::too_many_arguments)]
pub fn run_lifecycle<S: Scalar>(
    model: &Model<S>,
    world: &World,
    initial: &SensorAssignment,
    schedule: &LifecycleSchedule,
    windows: &[usize],
    win: EvalWindowing,
    spec: InferenceSpec,
    seed: u64,
) -> Result<LifecycleReport> {
    schedule.validate(initial)?;
    let mut rng = RngStream::new(seed, STREAM_LIFECYCLE);
    let mut state = SensingState::new(initial);
    let score = |state: &SensingState| -> Result<f64> {
        let layout = EpisodeLayout::from_sensors(&state.assignment()?);
        Ok(point_scores(&evaluate(model, world, &layout, windows, win, spec)?)?.2)
    };
    let base = score(&state)?;
    let checksum = || format!("{:016x}", model.checksum());
    let mut days = vec![LifecycleDay {
        day: 0,
        stage: None,
        events: Vec::new(),
        observed: state.observed().len(),
        damaged: 0,
        rrmse: base,
        retention: 1.0,
        param_checksum: checksum(),
    }];
    for stage in &schedule.stages {
        for _ in 0..stage.days {
            let events = match stage.kind {
                StageKind::Damage => state.damage(stage.per_day, &mut rng),
                StageKind::Repair => state.repair(stage.per_day),
                StageKind::Add => state.add(stage.per_day, &mut rng),
            };
            let now = score(&state)?;
            days.push(LifecycleDay {
                day: days.len(),
                stage: Some(stage.kind),
                events: events.iter().map(|&s| world.graph.segment(s).id).collect(),
                observed: state.observed().len(),
                damaged: state.damaged(),
                rrmse: now,
                retention: retention_ratio(now, base)?,
                param_checksum: checksum(),
            });
        }
    }
    Ok(LifecycleReport { seed, days })
}
