use diffcore::RngStream;

use super::graph::RoadGraph;
use super::{STEPS_PER_DAY, STREAM_FLOW, STREAM_NOISE};
use crate::error::{Error, Result};

/// Segment-major flow arrays (`[segment * n_steps + t]`), in vehicles per interval.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    n_segments: usize,
    n_steps: usize,
    /// Latent noiseless flow; `None` for worlds loaded from disk.
    f_true: Option<Vec<f64>>,
    y_obs: Vec<f64>,
    noise_sigma: f64,
}

impl FlowField {
    pub fn observed_only(
        n_segments: usize,
        n_steps: usize,
        y_obs: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        if y_obs.len() != n_segments * n_steps {
            return Err(Error::Integrity(format!(
                "flow array has {} values, expected {}",
                y_obs.len(),
                n_segments * n_steps
            )));
        }
        Ok(Self {
            n_segments,
            n_steps,
            f_true: None,
            y_obs,
            noise_sigma,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn has_truth(&self) -> bool {
        self.f_true.is_some()
    }

    pub fn f_true(&self) -> Option<&[f64]> {
        self.f_true.as_deref()
    }

    pub fn y_obs(&self) -> &[f64] {
        &self.y_obs
    }

    pub fn y(&self, seg: usize, t: usize) -> f64 {
        self.y_obs[seg * self.n_steps + t]
    }

    pub fn truth(&self, seg: usize, t: usize) -> Option<f64> {
        self.f_true.as_ref().map(|f| f[seg * self.n_steps + t])
    }

    pub fn series(&self, seg: usize) -> &[f64] {
        &self.y_obs[seg * self.n_steps..(seg + 1) * self.n_steps]
    }
}

/// Diurnal demand shape at `hour` ∈ [0, 24). `morning_weight` ∈ [0, 1] shifts
/// peak mass between the morning and evening rush.
pub fn diurnal_profile(hour: f64, weekend: bool, morning_weight: f64) -> f64 {
    let bump = |centre: f64, width: f64| (-(hour - centre).powi(2) / (2.0 * width * width)).exp();
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let plateau = 0.45 * logistic((hour - 6.5) / 0.8) * logistic((21.5 - hour) / 1.0);
    let am = (0.35 + 0.5 * morning_weight) * bump(8.0, 1.1);
    let pm = (0.35 + 0.5 * (1.0 - morning_weight)) * bump(17.5, 1.4);
    if weekend {
        0.15 + 0.8 * plateau + 0.3 * (am + pm)
    } else {
        0.15 + plateau + am + pm
    }
}

/// Standardised, graph-smoothed Gaussian field over segments.
pub(crate) fn smooth_field(graph: &RoadGraph, rng: &mut RngStream, iterations: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..graph.len()).map(|_| rng.normal()).collect();
    let mut z = graph.diffuse(&raw, 0.6, iterations);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in &mut z {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
    z
}

/// `f_true = base(class, lanes) · diurnal(t) · spatial · day AR(1) · intraday AR(1)`,
/// `y_obs = max(0, f_true + σε)`. Day 0 is a Monday.
pub fn generate_flow(
    graph: &RoadGraph,
    horizon_days: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<FlowField> {
    if horizon_days < 1 {
        return Err(Error::Config("horizon must be at least one day".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let n = graph.len();
    let n_steps = horizon_days * STEPS_PER_DAY;
    let mut rng = RngStream::new(seed, STREAM_FLOW);

    let spatial: Vec<f64> = smooth_field(graph, &mut rng, 8)
        .iter()
        .map(|z| (0.35 * z).exp())
        .collect();
    let morning: Vec<f64> = smooth_field(graph, &mut rng, 8)
        .iter()
        .map(|z| 1.0 / (1.0 + (-1.5 * z).exp()))
        .collect();
    let base: Vec<f64> = graph
        .segments()
        .iter()
        .map(|s| s.class.base_lane_flow() * s.lanes as f64)
        .collect();

    // Day-level modulation: city-wide plus smoothed local AR(1), in log space.
    let mut day_log = vec![0.0; n * horizon_days];
    let (mut g, mut local) = (0.0, vec![0.0; n]);
    for d in 0..horizon_days {
        g = 0.6 * g + 0.8 * 0.06 * rng.normal();
        let shock = smooth_field(graph, &mut rng, 4);
        for v in 0..n {
            local[v] = 0.5 * local[v] + 0.866 * 0.05 * shock[v];
            day_log[v * horizon_days + d] = g + local[v];
        }
    }

    let rho: f64 = 0.92;
    let innov = (1.0 - rho * rho).sqrt() * 0.04;
    let mut intra = vec![0.0; n];
    let mut f_true = vec![0.0; n * n_steps];
    for t in 0..n_steps {
        let common = rng.normal();
        for a in intra.iter_mut() {
            *a = rho * *a + innov * (0.6 * common + 0.8 * rng.normal());
        }
        let day = t / STEPS_PER_DAY;
        let hour = (t % STEPS_PER_DAY) as f64 * 24.0 / STEPS_PER_DAY as f64;
        let weekend = day % 7 >= 5;
        for v in 0..n {
            let profile = diurnal_profile(hour, weekend, morning[v]);
            let modulation = (day_log[v * horizon_days + day] + intra[v]).exp();
            f_true[v * n_steps + t] = base[v] * profile * spatial[v] * modulation;
        }
    }

    let mut noise = RngStream::new(seed, STREAM_NOISE);
    let y_obs = f_true
        .iter()
        .map(|&f| {
            let e = noise.normal();
            (f + noise_sigma * e).max(0.0)
        })
        .collect();
    Ok(FlowField {
        n_segments: n,
        n_steps,
        f_true: Some(f_true),
        y_obs,
        noise_sigma,
    })
}
