use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{rrmse, MaskedSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub rejected_pct: f64,
    pub n_retained: usize,
    pub rrmse: Option<f64>,
}

/// Drop the `round(f·n)` targets with the highest PCV and recompute RRMSE on
/// the rest. Targets with undefined PCV are excluded up front.
pub fn error_rejection_curve(
    pcv: &[Option<f64>],
    y_true: &[f64],
    y_pred: &[f64],
    fractions: &[f64],
) -> Result<Vec<RejectionPoint>> {
    if pcv.len() != y_true.len() || y_pred.len() != y_true.len() {
        return Err(Error::Contract("rejection inputs are misaligned".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::Config(format!("rejection fraction {f} outside [0, 1)")));
    }
    let mut ranked: Vec<(f64, usize)> = pcv
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|v| (v, i)))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n = ranked.len();
    fractions
        .iter()
        .map(|&f| {
            let drop = (f * n as f64).round() as usize;
            let kept = &ranked[drop.min(n)..];
            let y: Vec<f64> = kept.iter().map(|&(_, i)| y_true[i]).collect();
            let p: Vec<f64> = kept.iter().map(|&(_, i)| y_pred[i]).collect();
            let score = match rrmse(&MaskedSeries::new(&y, &p)) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(RejectionPoint {
                rejected_pct: 100.0 * f,
                n_retained: kept.len(),
                rrmse: score,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcvBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub rrmse: Option<f64>,
}

/// RRMSE per PCV bin `[edges[i], edges[i+1])`, last bin closed.
pub fn pcv_bins(pcv: &[Option<f64>], y_true: &[f64], y_pred: &[f64], edges: &[f64]) -> Result<Vec<PcvBin>> {
    if pcv.len() != y_true.len() || y_pred.len() != y_true.len() {
        return Err(Error::Contract("pcv inputs are misaligned".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("pcv bin edges must be increasing with at least two entries".into()));
    }
    let last = edges.len() - 2;
    (0..=last)
        .map(|b| {
            let (lo, hi) = (edges[b], edges[b + 1]);
            let members: Vec<usize> = (0..pcv.len())
                .filter(|&i| {
                    pcv[i].is_some_and(|v| v >= lo && (v < hi || (b == last && v <= hi)))
                })
                .collect();
            let y: Vec<f64> = members.iter().map(|&i| y_true[i]).collect();
            let p: Vec<f64> = members.iter().map(|&i| y_pred[i]).collect();
            Ok(PcvBin {
                lower: lo,
                upper: hi,
                count: members.len(),
                rrmse: rrmse(&MaskedSeries::new(&y, &p)).ok(),
            })
        })
        .collect()
}
