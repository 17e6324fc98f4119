use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::fcd::{simulate_fcd, FcdConfig, FcdProcess};
use super::flow::{generate_flow, FlowField};
use super::graph::{generate_graph, RoadClass, RoadGraph};
use super::sensors::{inject_missing, MissingnessMask};
use super::{INTERVAL_MINUTES, STEPS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_segments: usize,
    pub days: usize,
    pub noise_sigma: f64,
    pub missing_rate: f64,
    pub penetration_min: f64,
    pub penetration_max: f64,
    pub speed_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_segments: 60,
            days: 14,
            noise_sigma: 10.0,
            missing_rate: 0.0976,
            penetration_min: 0.02,
            penetration_max: 0.10,
            speed_noise: 0.1,
            seed: 0,
        }
    }
}

/// Road graph, flows, probe data and sensor outages on a 15-minute grid.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub graph: RoadGraph,
    pub flow: FlowField,
    pub fcd: FcdProcess,
    pub missing: MissingnessMask,
    pub epoch: NaiveDateTime,
}

/// Default start of the time axis (a Monday at midnight).
pub fn default_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid constant date")
}

pub fn generate_world(config: &WorldConfig) -> Result<World> {
    let graph = generate_graph(config.n_segments, config.seed)?;
    let flow = generate_flow(&graph, config.days, config.seed, config.noise_sigma)?;
    let fcd_cfg = FcdConfig {
        penetration_range: (config.penetration_min, config.penetration_max),
        speed_noise: config.speed_noise,
    };
    let fcd = simulate_fcd(&flow, &graph, &fcd_cfg, config.seed)?;
    let missing = inject_missing(graph.len(), flow.n_steps(), config.missing_rate, config.seed)?;
    World::new(graph, flow, fcd, missing, default_epoch())
}

pub const FEATURE_DIM: usize = 19;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "tod_sin", "tod_cos", "dow_mon", "dow_tue", "dow_wed", "dow_thu", "dow_fri", "dow_sat",
    "dow_sun", "class_arterial", "class_collector", "class_local", "lanes", "length",
    "betweenness", "closeness", "fcd_flow", "fcd_speed", "fcd_avail",
];

const FCD_FLOW_COL: usize = 16;
const FCD_SPEED_COL: usize = 17;
const FCD_AVAIL_COL: usize = 18;

/// Which probe-derived features to zero out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    pub drop_fcd_flow: bool,
    pub drop_fcd_speed: bool,
}

impl FeatureMask {
    pub const NONE: FeatureMask = FeatureMask {
        drop_fcd_flow: false,
        drop_fcd_speed: false,
    };

    /// Parse a comma-separated subset of `fcd_flow`, `fcd_speed`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut m = FeatureMask::NONE;
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "fcd_flow" => m.drop_fcd_flow = true,
                "fcd_speed" => m.drop_fcd_speed = true,
                other => return Err(Error::Config(format!("unknown FCD feature `{other}`"))),
            }
        }
        Ok(m)
    }

    pub fn label(&self) -> &'static str {
        match (self.drop_fcd_flow, self.drop_fcd_speed) {
            (false, false) => "none",
            (true, false) => "fcd_flow",
            (false, true) => "fcd_speed",
            (true, true) => "fcd_flow+fcd_speed",
        }
    }
}

impl World {
    pub fn new(
        graph: RoadGraph,
        flow: FlowField,
        fcd: FcdProcess,
        missing: MissingnessMask,
        epoch: NaiveDateTime,
    ) -> Result<Self> {
        let cells = graph.len() * flow.n_steps();
        if flow.n_segments() != graph.len()
            || fcd.flows().len() != cells
            || missing.flags().len() != cells
        {
            return Err(Error::Integrity("world arrays disagree on dimensions".into()));
        }
        Ok(Self {
            graph,
            flow,
            fcd,
            missing,
            epoch,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.graph.len()
    }

    pub fn n_steps(&self) -> usize {
        self.flow.n_steps()
    }

    pub fn steps_per_day(&self) -> usize {
        STEPS_PER_DAY
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.epoch + Duration::minutes(INTERVAL_MINUTES as i64 * t as i64)
    }

    /// Observed flow if the fixed-sensor reading is valid.
    pub fn observation(&self, seg: usize, t: usize) -> Option<f64> {
        self.missing
            .is_valid(seg, t)
            .then(|| self.flow.y(seg, t))
    }

    /// Write the point features of `(seg, t)` into `out` (length [`FEATURE_DIM`]).
    pub fn features_into(&self, seg: usize, t: usize, mask: FeatureMask, out: &mut [f64]) {
        debug_assert_eq!(out.len(), FEATURE_DIM);
        out.fill(0.0);
        let ts = self.timestamp(t);
        let minutes = (ts.hour() * 60 + ts.minute()) as f64;
        let phase = std::f64::consts::TAU * minutes / 1440.0;
        out[0] = phase.sin();
        out[1] = phase.cos();
        out[2 + ts.weekday().num_days_from_monday() as usize] = 1.0;

        let s = self.graph.segment(seg);
        out[9 + s.class.index()] = 1.0;
        out[12] = s.lanes as f64 / 4.0;
        out[13] = s.length_m / 1000.0;
        out[14] = normalised(self.graph.betweenness(), seg);
        out[15] = normalised(self.graph.closeness(), seg);

        if self.fcd.available(seg, t) {
            if !mask.drop_fcd_flow {
                out[FCD_FLOW_COL] = self.fcd.flow(seg, t) / 10.0;
            }
            if !mask.drop_fcd_speed {
                out[FCD_SPEED_COL] = self.fcd.speed(seg, t) / 50.0;
            }
            if !(mask.drop_fcd_flow && mask.drop_fcd_speed) {
                out[FCD_AVAIL_COL] = 1.0;
            }
        }
    }

    pub fn features(&self, seg: usize, t: usize, mask: FeatureMask) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_DIM];
        self.features_into(seg, t, mask, &mut v);
        v
    }

    pub fn class_of(&self, seg: usize) -> RoadClass {
        self.graph.segment(seg).class
    }
}

fn normalised(values: &[f64], i: usize) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values[i] / max
    } else {
        0.0
    }
}
