use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::TargetOutcome;
use crate::error::{Error, Result};
use crate::metrics::{rrmse, MaskedSeries};

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// One-sided exact sign test: P(X ≥ wins) for X ~ Binomial(wins + losses, ½).
/// Ties are dropped before calling.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            coef = coef * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += coef;
        }
    }
    tail / 2f64.powi(n as i32)
}

/// Wins, losses and ties of `a[i] ≥ b[i]` comparisons (higher is better).
pub fn paired_signs(a: &[f64], b: &[f64]) -> (usize, usize, usize) {
    a.iter().zip(b).fold((0, 0, 0), |(w, l, t), (x, y)| {
        if x > y {
            (w + 1, l, t)
        } else if x < y {
            (w, l + 1, t)
        } else {
            (w, l, t + 1)
        }
    })
}

/// Per-segment RRMSE over time of the outcomes accepted by `keep`.
pub fn segment_rrmse(outcomes: &[TargetOutcome], keep: impl Fn(&TargetOutcome) -> bool) -> BTreeMap<usize, f64> {
    let mut by_seg: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| keep(o)) {
        if let Some(y) = o.y {
            let e = by_seg.entry(o.segment).or_default();
            e.0.push(y);
            e.1.push(o.predictive.mean());
        }
    }
    by_seg
        .into_iter()
        .filter_map(|(s, (y, p))| rrmse(&MaskedSeries::new(&y, &p)).ok().map(|v| (s, v)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

/// Summaries of `(penetration, rrmse)` samples per bin. Bins are half-open
/// except the last, which includes its upper edge; empty bins report count 0.
pub fn penetration_binning(samples: &[(f64, f64)], edges: &[f64]) -> Result<Vec<PenetrationBin>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing, at least two".into()));
    }
    let nb = edges.len() - 1;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nb];
    for &(p, v) in samples {
        let idx = (0..nb).find(|&b| p >= edges[b] && (p < edges[b + 1] || (b == nb - 1 && p <= edges[nb])));
        match idx {
            Some(b) => bins[b].push(v),
            None => {
                return Err(Error::Contract(format!(
                    "penetration {p} outside the bin range [{}, {}]",
                    edges[0], edges[nb]
                )))
            }
        }
    }
    Ok(bins
        .into_iter()
        .enumerate()
        .map(|(b, mut v)| {
            v.sort_by(f64::total_cmp);
            PenetrationBin {
                lower: edges[b],
                upper: edges[b + 1],
                count: v.len(),
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
            }
        })
        .collect())
}
