use diffcore::RngStream;

use super::flow::{smooth_field, FlowField};
use super::graph::RoadGraph;
use super::STREAM_FCD;
use crate::error::{Error, Result};

/// Probe-vehicle observations per (segment, t), segment-major like [`FlowField`].
#[derive(Clone, Debug, PartialEq)]
pub struct FcdProcess {
    n_steps: usize,
    /// Per-segment probe fraction; `None` when loaded from disk.
    penetration: Option<Vec<f64>>,
    fcd_flow: Vec<f64>,
    fcd_speed: Vec<f64>,
    avail: Vec<bool>,
}

impl FcdProcess {
    /// Assemble from raw arrays, zeroing fields wherever availability is off.
    pub fn from_parts(
        n_steps: usize,
        fcd_flow: Vec<f64>,
        fcd_speed: Vec<f64>,
        avail: Vec<bool>,
    ) -> Result<Self> {
        if fcd_flow.len() != avail.len() || fcd_speed.len() != avail.len() {
            return Err(Error::Integrity("fcd array length mismatch".into()));
        }
        for (i, &a) in avail.iter().enumerate() {
            if !a && (fcd_flow[i] != 0.0 || fcd_speed[i] != 0.0) {
                return Err(Error::Integrity(format!(
                    "fcd cell {i} is unavailable but carries nonzero values"
                )));
            }
        }
        Ok(Self {
            n_steps,
            penetration: None,
            fcd_flow,
            fcd_speed,
            avail,
        })
    }

    pub fn penetration(&self) -> Option<&[f64]> {
        self.penetration.as_deref()
    }

    pub fn flow(&self, seg: usize, t: usize) -> f64 {
        self.fcd_flow[seg * self.n_steps + t]
    }

    pub fn speed(&self, seg: usize, t: usize) -> f64 {
        self.fcd_speed[seg * self.n_steps + t]
    }

    pub fn available(&self, seg: usize, t: usize) -> bool {
        self.avail[seg * self.n_steps + t]
    }

    pub fn flows(&self) -> &[f64] {
        &self.fcd_flow
    }

    pub fn speeds(&self) -> &[f64] {
        &self.fcd_speed
    }

    pub fn availability(&self) -> &[bool] {
        &self.avail
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcdConfig {
    pub penetration_range: (f64, f64),
    /// Log-scale speed noise for a single probe; shrinks as `1/√count`.
    pub speed_noise: f64,
}

impl Default for FcdConfig {
    fn default() -> Self {
        Self {
            penetration_range: (0.02, 0.10),
            speed_noise: 0.1,
        }
    }
}

/// Probe sampling: `fcd_flow ~ Binomial(round(f_true), p_ν)` with spatially
/// smooth `p_ν`, and a congestion-dependent median speed.
pub fn simulate_fcd(
    field: &FlowField,
    graph: &RoadGraph,
    config: &FcdConfig,
    seed: u64,
) -> Result<FcdProcess> {
    let (lo, hi) = config.penetration_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!(
            "penetration range ({lo}, {hi}) must lie in (0, 1]"
        )));
    }
    if config.speed_noise < 0.0 {
        return Err(Error::Config("speed_noise must be >= 0".into()));
    }
    let truth = field
        .f_true()
        .ok_or_else(|| Error::Contract("fcd simulation needs ground-truth flow".into()))?;
    let n = graph.len();
    let n_steps = field.n_steps();
    let mut rng = RngStream::new(seed, STREAM_FCD);

    // Rank-map a smooth field onto [lo, hi] so the full range is used.
    let z = smooth_field(graph, &mut rng, 6);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut penetration = vec![lo; n];
    for (rank, &v) in order.iter().enumerate() {
        let u = if n > 1 { rank as f64 / (n - 1) as f64 } else { 0.5 };
        penetration[v] = lo + (hi - lo) * u;
    }

    let mut fcd_flow = vec![0.0; n * n_steps];
    let mut fcd_speed = vec![0.0; n * n_steps];
    let mut avail = vec![false; n * n_steps];
    for v in 0..n {
        let seg = graph.segment(v);
        let capacity = seg.class.lane_capacity() * seg.lanes as f64;
        let free = seg.class.free_flow_speed();
        for t in 0..n_steps {
            let i = v * n_steps + t;
            let trials = truth[i].round().max(0.0) as u64;
            let count = rng.binomial(trials, penetration[v]);
            if count == 0 {
                continue;
            }
            let ratio = truth[i] / capacity;
            let congested = free / (1.0 + 0.15 * ratio.powi(4));
            let jitter = (config.speed_noise / (count as f64).sqrt() * rng.normal()).exp();
            fcd_flow[i] = count as f64;
            fcd_speed[i] = congested * jitter;
            avail[i] = true;
        }
    }
    Ok(FcdProcess {
        n_steps,
        penetration: Some(penetration),
        fcd_flow,
        fcd_speed,
        avail,
    })
}

/// Per-segment `Σ fcd_flow / Σ flow` over the given valid cells.
pub fn estimated_penetration(field: &FlowField, fcd: &FcdProcess, valid: &[bool]) -> Vec<f64> {
    let n_steps = field.n_steps();
    (0..field.n_segments())
        .map(|v| {
            let (mut probes, mut total) = (0.0, 0.0);
            for t in 0..n_steps {
                if valid[v * n_steps + t] {
                    probes += fcd.flow(v, t);
                    total += field.y(v, t);
                }
            }
            if total > 0.0 {
                probes / total
            } else {
                0.0
            }
        })
        .collect()
}
