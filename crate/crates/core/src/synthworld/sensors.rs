use diffcore::RngStream;

use super::{STREAM_MISSING, STREAM_SENSORS};
use crate::error::{Error, Result};

/// Split of segments into instrumented (observed) and virtual sensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorAssignment {
    n_segments: usize,
    observed: Vec<usize>,
    is_observed: Vec<bool>,
}

impl SensorAssignment {
    /// Explicit observed set; must be nonempty and a strict subset.
    pub fn from_observed(n_segments: usize, mut observed: Vec<usize>) -> Result<Self> {
        observed.sort_unstable();
        observed.dedup();
        if observed.is_empty() || observed.len() >= n_segments {
            return Err(Error::Config(format!(
                "observed set of size {} must be nonempty and smaller than {n_segments}",
                observed.len()
            )));
        }
        if let Some(&bad) = observed.iter().find(|&&v| v >= n_segments) {
            return Err(Error::Config(format!("observed segment {bad} out of range")));
        }
        let mut is_observed = vec![false; n_segments];
        for &v in &observed {
            is_observed[v] = true;
        }
        Ok(Self {
            n_segments,
            observed,
            is_observed,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Observed segment indices, ascending.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Unobserved segment indices, ascending.
    pub fn unobserved(&self) -> Vec<usize> {
        (0..self.n_segments).filter(|&v| !self.is_observed[v]).collect()
    }

    pub fn is_observed(&self, seg: usize) -> bool {
        self.is_observed[seg]
    }

    pub fn unobserved_ratio(&self) -> f64 {
        1.0 - self.observed.len() as f64 / self.n_segments as f64
    }
}

/// Uniform random split with `round((1-ratio)·n)` observed segments.
pub fn assign_sensors(n_segments: usize, unobserved_ratio: f64, seed: u64) -> Result<SensorAssignment> {
    if !(unobserved_ratio > 0.0 && unobserved_ratio < 1.0) {
        return Err(Error::Config(format!(
            "unobserved ratio must be in (0, 1), got {unobserved_ratio}"
        )));
    }
    let count = (((1.0 - unobserved_ratio) * n_segments as f64).round() as usize).max(1);
    if count >= n_segments {
        return Err(Error::Config(format!(
            "ratio {unobserved_ratio} leaves no unobserved segment among {n_segments}"
        )));
    }
    let mut rng = RngStream::new(seed, STREAM_SENSORS);
    let observed = rng.choose_indices(n_segments, count);
    SensorAssignment::from_observed(n_segments, observed)
}

/// Validity flags for fixed-sensor readings, segment-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissingnessMask {
    n_steps: usize,
    valid: Vec<bool>,
}

impl MissingnessMask {
    pub fn all_valid(n_segments: usize, n_steps: usize) -> Self {
        Self {
            n_steps,
            valid: vec![true; n_segments * n_steps],
        }
    }

    pub fn from_flags(n_steps: usize, valid: Vec<bool>) -> Self {
        Self { n_steps, valid }
    }

    pub fn is_valid(&self, seg: usize, t: usize) -> bool {
        self.valid[seg * self.n_steps + t]
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn missing_rate(&self) -> f64 {
        self.valid.iter().filter(|&&v| !v).count() as f64 / self.valid.len() as f64
    }
}

/// Blockwise outages of 1–8 consecutive intervals until exactly
/// `round(rate · cells)` readings are invalid.
pub fn inject_missing(n_segments: usize, n_steps: usize, rate: f64, seed: u64) -> Result<MissingnessMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("missing rate must be in [0, 1), got {rate}")));
    }
    let mut mask = MissingnessMask::all_valid(n_segments, n_steps);
    let total = n_segments * n_steps;
    let target = (rate * total as f64).round() as usize;
    let mut rng = RngStream::new(seed, STREAM_MISSING);
    let mut missing = 0;
    while missing < target {
        let seg = rng.below(n_segments);
        let start = rng.below(n_steps);
        let len = 1 + rng.below(8);
        for t in start..(start + len).min(n_steps) {
            let cell = &mut mask.valid[seg * n_steps + t];
            if *cell && missing < target {
                *cell = false;
                missing += 1;
            }
        }
    }
    Ok(mask)
}
