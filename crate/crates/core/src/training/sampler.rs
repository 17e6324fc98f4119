use diffcore::RngStream;

use super::{TrainingConfig, STREAM_SPLIT};
use crate::error::{Error, Result};
use crate::npmodel::{Episode, EpisodeMeta, SubTask};
use crate::synthworld::{FeatureMask, SensorAssignment, World, FEATURE_DIM};

/// Which segments act as context sources and which are inferred.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeLayout {
    pub observed: Vec<usize>,
    pub unobserved: Vec<usize>,
}

impl EpisodeLayout {
    pub fn from_sensors(sensors: &SensorAssignment) -> Self {
        Self {
            observed: sensors.observed().to_vec(),
            unobserved: sensors.unobserved(),
        }
    }
}

/// Context = observed × [t0−T+1, t0] with valid readings; targets =
/// unobserved × history, observed × future, unobserved × future. Returns
/// `None` when every context reading is missing.
pub fn build_episode(
    world: &World,
    layout: &EpisodeLayout,
    t0: usize,
    history: usize,
    horizon: usize,
    mask: FeatureMask,
) -> Result<Option<Episode>> {
    if history < 1 || horizon < 1 || t0 + 1 < history || t0 + horizon >= world.n_steps() {
        return Err(Error::Contract(format!(
            "window at t0={t0} does not fit T={history}, H={horizon} in {} steps",
            world.n_steps()
        )));
    }
    let past = t0 + 1 - history..=t0;
    let future = t0 + 1..=t0 + horizon;
    let mut row = [0.0; FEATURE_DIM];

    let (mut cx, mut cy, mut c_at) = (Vec::new(), Vec::new(), Vec::new());
    for &seg in &layout.observed {
        for t in past.clone() {
            if let Some(y) = world.observation(seg, t) {
                world.features_into(seg, t, mask, &mut row);
                cx.extend_from_slice(&row);
                cy.push(y);
                c_at.push((seg, t));
            }
        }
    }
    if cy.is_empty() {
        return Ok(None);
    }

    let (mut tx, mut tasks, mut ty, mut t_at) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let groups = [
        (SubTask::EstimateUnobserved, &layout.unobserved, past.clone()),
        (SubTask::ForecastObserved, &layout.observed, future.clone()),
        (SubTask::ForecastUnobserved, &layout.unobserved, future),
    ];
    for (task, segs, range) in groups {
        for &seg in segs.iter() {
            for t in range.clone() {
                world.features_into(seg, t, mask, &mut row);
                tx.extend_from_slice(&row);
                tasks.push(task);
                ty.push(world.observation(seg, t));
                t_at.push((seg, t));
            }
        }
    }
    let ep = Episode::new(FEATURE_DIM, cx, cy, tx, tasks, ty)?;
    Ok(Some(ep.with_meta(EpisodeMeta {
        t0,
        history,
        horizon,
        context_at: c_at,
        target_at: t_at,
    })))
}

/// Sliding windows (step 1) over a world, split in time into train and test,
/// with a validation subset drawn from the training windows.
#[derive(Clone, Debug)]
pub struct EpisodeSampler<'w> {
    world: &'w World,
    sensors: SensorAssignment,
    mask: FeatureMask,
    history: usize,
    horizon: usize,
    pseudo_range: (f64, f64),
    max_targets: Option<usize>,
    split_step: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl<'w> EpisodeSampler<'w> {
    pub fn new(world: &'w World, sensors: SensorAssignment, cfg: &TrainingConfig, mask: FeatureMask) -> Result<Self> {
        cfg.validate()?;
        if sensors.n_segments() != world.n_segments() {
            return Err(Error::Config("sensor assignment does not match the world".into()));
        }
        if sensors.observed().len() < 2 {
            return Err(Error::Config("training needs at least two observed segments".into()));
        }
        let (t, h, n) = (cfg.history, cfg.horizon, world.n_steps());
        let split_step = (cfg.train_fraction * n as f64).floor() as usize;
        let windows = (t - 1)..n.saturating_sub(h);
        let mut train_all: Vec<usize> = windows.clone().filter(|&t0| t0 + h < split_step).collect();
        let test: Vec<usize> = windows.filter(|&t0| t0 + 1 >= split_step + t).collect();
        if train_all.len() < 2 || test.is_empty() {
            return Err(Error::Config(format!(
                "{n} steps leave too few windows for T={t}, H={h} and a {} train share",
                cfg.train_fraction
            )));
        }
        let n_val = ((cfg.val_fraction * train_all.len() as f64).round() as usize).clamp(1, train_all.len() - 1);
        let mut rng = RngStream::new(cfg.seed, STREAM_SPLIT);
        let mut picked = rng.choose_indices(train_all.len(), n_val);
        picked.sort_unstable();
        let val: Vec<usize> = picked.iter().map(|&i| train_all[i]).collect();
        for &i in picked.iter().rev() {
            train_all.remove(i);
        }
        Ok(Self {
            world,
            sensors,
            mask,
            history: t,
            horizon: h,
            pseudo_range: cfg.pseudo_unobserved_range,
            max_targets: cfg.max_targets,
            split_step,
            train: train_all,
            val,
            test,
        })
    }

    pub fn world(&self) -> &'w World {
        self.world
    }

    pub fn sensors(&self) -> &SensorAssignment {
        &self.sensors
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// First step of the test period.
    pub fn split_step(&self) -> usize {
        self.split_step
    }

    pub fn train_windows(&self) -> &[usize] {
        &self.train
    }

    pub fn val_windows(&self) -> &[usize] {
        &self.val
    }

    pub fn test_windows(&self) -> &[usize] {
        &self.test
    }

    /// Mean valid reading at observed segments over the training period;
    /// used to scale flows inside the model.
    pub fn flow_scale(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for &seg in self.sensors.observed() {
            for t in 0..self.split_step {
                if let Some(y) = self.world.observation(seg, t) {
                    sum += y;
                    n += 1;
                }
            }
        }
        if n == 0 || sum <= 0.0 {
            1.0
        } else {
            sum / n as f64
        }
    }

    /// Episode with the real sensor split (evaluation).
    pub fn eval_episode(&self, t0: usize) -> Result<Option<Episode>> {
        self.episode_with(&EpisodeLayout::from_sensors(&self.sensors), t0)
    }

    pub fn episode_with(&self, layout: &EpisodeLayout, t0: usize) -> Result<Option<Episode>> {
        build_episode(self.world, layout, t0, self.history, self.horizon, self.mask)
    }

    /// Training episode: observed sensors are split at random into pseudo
    /// observed and pseudo unobserved; only targets with a reading are kept,
    /// capped at `max_targets`. True unobserved segments never appear.
    pub fn train_episode(&self, t0: usize, rng: &mut RngStream) -> Result<Option<Episode>> {
        let obs = self.sensors.observed();
        let (lo, hi) = self.pseudo_range;
        let frac = rng.uniform_range(lo, hi);
        let k = ((frac * obs.len() as f64).round() as usize).clamp(1, obs.len() - 1);
        let mut hidden = rng.choose_indices(obs.len(), k);
        hidden.sort_unstable();
        let mut layout = EpisodeLayout {
            observed: Vec::with_capacity(obs.len() - k),
            unobserved: hidden.iter().map(|&i| obs[i]).collect(),
        };
        for (i, &seg) in obs.iter().enumerate() {
            if hidden.binary_search(&i).is_err() {
                layout.observed.push(seg);
            }
        }
        let Some(ep) = self.episode_with(&layout, t0)? else {
            return Ok(None);
        };
        let mut keep: Vec<usize> = (0..ep.n_targets()).filter(|&i| ep.target_y()[i].is_some()).collect();
        if keep.is_empty() {
            return Ok(None);
        }
        if let Some(cap) = self.max_targets {
            if keep.len() > cap {
                let mut pick = rng.choose_indices(keep.len(), cap);
                pick.sort_unstable();
                keep = pick.into_iter().map(|i| keep[i]).collect();
            }
        }
        Ok(Some(ep.with_target_subset(&keep)?))
    }
}
