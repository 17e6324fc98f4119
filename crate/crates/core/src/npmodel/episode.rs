use crate::error::{Error, Result};

use super::SubTask;

/// Where each point of an episode came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeMeta {
    /// Last history step.
    pub t0: usize,
    pub history: usize,
    pub horizon: usize,
    /// `(segment, t)` per context point.
    pub context_at: Vec<(usize, usize)>,
    /// `(segment, t)` per target point.
    pub target_at: Vec<(usize, usize)>,
}

/// Context set `(x, y)` and tagged target points, stored as row-major matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    x_dim: usize,
    context_x: Vec<f64>,
    context_y: Vec<f64>,
    target_x: Vec<f64>,
    target_task: Vec<SubTask>,
    target_y: Vec<Option<f64>>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn new(
        x_dim: usize,
        context_x: Vec<f64>,
        context_y: Vec<f64>,
        target_x: Vec<f64>,
        target_task: Vec<SubTask>,
        target_y: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = context_y.len();
        let m = target_task.len();
        if x_dim == 0 || context_x.len() != n * x_dim || target_x.len() != m * x_dim || target_y.len() != m {
            return Err(Error::Contract("episode arrays are inconsistent".into()));
        }
        if n == 0 {
            return Err(Error::Contract("episode needs at least one context point".into()));
        }
        if let Some(y) = context_y.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
            return Err(Error::Domain(format!("context flow {y} is not finite and non-negative")));
        }
        Ok(Self {
            x_dim,
            context_x,
            context_y,
            target_x,
            target_task,
            target_y,
            meta: EpisodeMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: EpisodeMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn n_context(&self) -> usize {
        self.context_y.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_task.len()
    }

    pub fn context_x(&self) -> &[f64] {
        &self.context_x
    }

    pub fn context_y(&self) -> &[f64] {
        &self.context_y
    }

    pub fn target_x(&self) -> &[f64] {
        &self.target_x
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.target_x[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn context_row(&self, i: usize) -> &[f64] {
        &self.context_x[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn target_tasks(&self) -> &[SubTask] {
        &self.target_task
    }

    pub fn target_y(&self) -> &[Option<f64>] {
        &self.target_y
    }

    /// Target indices per subtask, in target order.
    pub fn groups(&self) -> Vec<(SubTask, Vec<usize>)> {
        SubTask::ALL
            .iter()
            .filter_map(|&task| {
                let idx: Vec<usize> = (0..self.n_targets())
                    .filter(|&i| self.target_task[i] == task)
                    .collect();
                (!idx.is_empty()).then_some((task, idx))
            })
            .collect()
    }

    /// Copy keeping only the listed context points (order preserved).
    pub fn with_context_subset(&self, keep: &[usize]) -> Result<Episode> {
        if keep.is_empty() || keep.iter().any(|&i| i >= self.n_context()) {
            return Err(Error::Contract("invalid context subset".into()));
        }
        let mut x = Vec::with_capacity(keep.len() * self.x_dim);
        for &i in keep {
            x.extend_from_slice(self.context_row(i));
        }
        let mut meta = self.meta.clone();
        if meta.context_at.len() == self.n_context() {
            meta.context_at = keep.iter().map(|&i| self.meta.context_at[i]).collect();
        }
        Ok(Episode {
            x_dim: self.x_dim,
            context_x: x,
            context_y: keep.iter().map(|&i| self.context_y[i]).collect(),
            target_x: self.target_x.clone(),
            target_task: self.target_task.clone(),
            target_y: self.target_y.clone(),
            meta,
        })
    }

    /// Copy keeping only the listed targets.
    pub fn with_target_subset(&self, keep: &[usize]) -> Result<Episode> {
        if keep.iter().any(|&i| i >= self.n_targets()) {
            return Err(Error::Contract("invalid target subset".into()));
        }
        let mut x = Vec::with_capacity(keep.len() * self.x_dim);
        for &i in keep {
            x.extend_from_slice(self.target_row(i));
        }
        let mut meta = self.meta.clone();
        if meta.target_at.len() == self.n_targets() {
            meta.target_at = keep.iter().map(|&i| self.meta.target_at[i]).collect();
        }
        Ok(Episode {
            x_dim: self.x_dim,
            context_x: self.context_x.clone(),
            context_y: self.context_y.clone(),
            target_x: x,
            target_task: keep.iter().map(|&i| self.target_task[i]).collect(),
            target_y: keep.iter().map(|&i| self.target_y[i]).collect(),
            meta,
        })
    }

    /// Context points plus every target with a known flow, as `(x, y)` rows.
    pub fn supervised_points(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = self.context_x.clone();
        let mut y = self.context_y.clone();
        for (i, t) in self.target_y.iter().enumerate() {
            if let Some(v) = t {
                x.extend_from_slice(self.target_row(i));
                y.push(*v);
            }
        }
        (x, y)
    }
}
