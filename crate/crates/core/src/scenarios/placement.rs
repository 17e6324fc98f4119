use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use diffcore::{RngStream, Scalar};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, point_scores, EvalWindowing, InferenceSpec};
use super::STREAM_PLACEMENT;
use crate::error::{Error, Result};
use crate::npmodel::Model;
use crate::synthworld::{SensorAssignment, World};
use crate::training::EpisodeLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    UncertaintyDesc,
    UncertaintyAsc,
    BetweennessDesc,
    ClosenessDesc,
    Random,
}

impl PlacementKind {
    pub const ALL: [PlacementKind; 5] = [
        PlacementKind::UncertaintyDesc,
        PlacementKind::UncertaintyAsc,
        PlacementKind::BetweennessDesc,
        PlacementKind::ClosenessDesc,
        PlacementKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlacementKind::UncertaintyDesc => "uncertainty_desc",
            PlacementKind::UncertaintyAsc => "uncertainty_asc",
            PlacementKind::BetweennessDesc => "betweenness_desc",
            PlacementKind::ClosenessDesc => "closeness_desc",
            PlacementKind::Random => "random",
        }
    }
}

impl fmt::Display for PlacementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlacementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlacementKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown placement strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementStrategy {
    pub kind: PlacementKind,
    pub batch_size: usize,
}

/// Order `candidates` by score, highest first, ties by ascending id.
pub fn order_by_score(candidates: &[usize], score: impl Fn(usize) -> f64, descending: bool) -> Vec<usize> {
    let mut c: Vec<(usize, f64)> = candidates.iter().map(|&s| (s, score(s))).collect();
    c.sort_by(|a, b| {
        let by = if descending { b.1.total_cmp(&a.1) } else { a.1.total_cmp(&b.1) };
        by.then(a.0.cmp(&b.0))
    });
    c.into_iter().map(|(s, _)| s).collect()
}

/// Time-averaged total predictive std per unobserved segment over the
/// evaluation windows.
pub fn uncertainty_scores<S: Scalar>(
    model: &Model<S>,
    world: &World,
    sensors: &SensorAssignment,
    windows: &[usize],
    win: EvalWindowing,
    spec: InferenceSpec,
) -> Result<BTreeMap<usize, f64>> {
    let layout = EpisodeLayout::from_sensors(sensors);
    let outcomes = evaluate(model, world, &layout, windows, win, spec)?;
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for o in &outcomes {
        if !sensors.is_observed(o.segment) {
            let e = acc.entry(o.segment).or_insert((0.0, 0));
            e.0 += o.predictive.decompose().total_std();
            e.1 += 1;
        }
    }
    Ok(acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect())
}

/// Unobserved segments in placement order for `kind`.
pub fn rank_candidates<S: Scalar>(
    model: &Model<S>,
    world: &World,
    sensors: &SensorAssignment,
    kind: PlacementKind,
    windows: &[usize],
    win: EvalWindowing,
    spec: InferenceSpec,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let pool = sensors.unobserved();
    if pool.is_empty() {
        return Err(Error::Contract("no unobserved segment to rank".into()));
    }
    let g = &world.graph;
    Ok(match kind {
        PlacementKind::UncertaintyDesc | PlacementKind::UncertaintyAsc => {
            let scores = uncertainty_scores(model, world, sensors, windows, win, spec)?;
            let score = |s: usize| scores.get(&s).copied().unwrap_or(0.0);
            order_by_score(&pool, score, kind == PlacementKind::UncertaintyDesc)
        }
        PlacementKind::BetweennessDesc => order_by_score(&pool, |s| g.betweenness()[s], true),
        PlacementKind::ClosenessDesc => order_by_score(&pool, |s| g.closeness()[s], true),
        PlacementKind::Random => {
            let mut p = pool;
            rng.shuffle(&mut p);
            p
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRound {
    pub round: usize,
    pub observed: usize,
    pub unobserved_ratio: f64,
    /// Segment ids added in this round.
    pub added: Vec<u32>,
    pub r2: f64,
    pub rmse: f64,
    pub param_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub strategy: PlacementKind,
    pub batch_size: usize,
    pub seed: u64,
    pub fine_tune: bool,
    pub rounds: Vec<PlacementRound>,
}

impl PlacementReport {
    pub fn final_r2(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.r2)
    }
}

/// Round 0 scores the initial layout; each later round ranks, adds
/// `batch_size` sensors and re-scores without touching the parameters.
/// Stops early when the pool is exhausted (one segment always stays
/// unobserved).
#[allow(clippy::too_many_arguments)]
pub fn run_placement<S: Scalar>(
    model: &Model<S>,
    world: &World,
    initial: &SensorAssignment,
    strategy: PlacementStrategy,
    rounds: usize,
    windows: &[usize],
    win: EvalWindowing,
    spec: InferenceSpec,
    seed: u64,
) -> Result<PlacementReport> {
    if strategy.batch_size < 1 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, STREAM_PLACEMENT);
    let mut sensors = initial.clone();
    let mut out = Vec::with_capacity(rounds + 1);
    let mut added: Vec<u32> = Vec::new();
    for round in 0..=rounds {
        if round > 0 {
            // A sensor assignment keeps at least one unobserved segment.
            let room = sensors.unobserved().len() - 1;
            if room == 0 {
                break;
            }
            let order = rank_candidates(model, world, &sensors, strategy.kind, windows, win, spec, &mut rng)?;
            let pick: Vec<usize> = order.into_iter().take(strategy.batch_size.min(room)).collect();
            added = pick.iter().map(|&s| world.graph.segment(s).id).collect();
            let mut obs = sensors.observed().to_vec();
            obs.extend(pick);
            sensors = SensorAssignment::from_observed(world.n_segments(), obs)?;
        }
        let layout = EpisodeLayout::from_sensors(&sensors);
        let outcomes = evaluate(model, world, &layout, windows, win, spec)?;
        let (r2, rmse, _) = point_scores(&outcomes)?;
        out.push(PlacementRound {
            round,
            observed: sensors.observed().len(),
            unobserved_ratio: sensors.unobserved_ratio(),
            added: std::mem::take(&mut added),
            r2,
            rmse,
            param_checksum: format!("{:016x}", model.checksum()),
        });
    }
    Ok(PlacementReport {
        strategy: strategy.kind,
        batch_size: strategy.batch_size,
        seed,
        fine_tune: false,
        rounds: out,
    })
}
