//! Deterministic and probabilistic scores over masked series.
//!
//! Every function takes an optional validity mask; invalid entries are skipped
//! entirely, whatever values they hold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::Mixture;

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Aligned truth/prediction arrays with optional validity flags.
#[derive(Clone, Copy, Debug)]
pub struct MaskedSeries<'a> {
    pub y_true: &'a [f64],
    pub y_pred: &'a [f64],
    pub mask: Option<&'a [bool]>,
}

impl<'a> MaskedSeries<'a> {
    pub fn new(y_true: &'a [f64], y_pred: &'a [f64]) -> Self {
        Self {
            y_true,
            y_pred,
            mask: None,
        }
    }

    pub fn masked(y_true: &'a [f64], y_pred: &'a [f64], mask: &'a [bool]) -> Self {
        Self {
            y_true,
            y_pred,
            mask: Some(mask),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.y_true.len();
        if self.y_pred.len() != n || self.mask.is_some_and(|m| m.len() != n) {
            return Err(Error::Contract("series arrays are misaligned".into()));
        }
        Ok(())
    }

    /// Valid `(y, ŷ)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.y_true.len())
            .filter(|&i| self.mask.is_none_or(|m| m[i]))
            .map(|i| (self.y_true[i], self.y_pred[i]))
    }

    pub fn n_valid(&self) -> usize {
        self.pairs().count()
    }

    fn nonempty(&self) -> Result<usize> {
        self.check()?;
        match self.n_valid() {
            0 => Err(Error::UndefinedMetric("no valid entries")),
            n => Ok(n),
        }
    }
}

pub fn mae(s: &MaskedSeries) -> Result<f64> {
    let n = s.nonempty()?;
    Ok(s.pairs().map(|(y, p)| (y - p).abs()).sum::<f64>() / n as f64)
}

pub fn rmse(s: &MaskedSeries) -> Result<f64> {
    let n = s.nonempty()?;
    Ok((s.pairs().map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n as f64).sqrt())
}

/// `1 − SSE/SST`; undefined when the truth has zero variance.
pub fn r2(s: &MaskedSeries) -> Result<f64> {
    let n = s.nonempty()?;
    let mean = s.pairs().map(|(y, _)| y).sum::<f64>() / n as f64;
    let sst: f64 = s.pairs().map(|(y, _)| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("r2 with constant truth"));
    }
    let sse: f64 = s.pairs().map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Percent. Terms with `|y| + |ŷ| = 0` contribute 0.
pub fn smape(s: &MaskedSeries) -> Result<f64> {
    let n = s.nonempty()?;
    let total: f64 = s
        .pairs()
        .map(|(y, p)| {
            let denom = (y.abs() + p.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (y - p).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / n as f64)
}

/// RMSE over mean truth, percent.
pub fn rrmse(s: &MaskedSeries) -> Result<f64> {
    let n = s.nonempty()?;
    let mean = s.pairs().map(|(y, _)| y).sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(Error::UndefinedMetric("rrmse with nonpositive mean truth"));
    }
    Ok(100.0 * rmse(s)? / mean)
}

/// Closed-form CRPS of `N(μ, σ²)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("crps needs sigma > 0, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - INV_SQRT_PI))
}

/// `E|X|` for `X ~ N(m, s²)`.
fn abs_moment(m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return m.abs();
    }
    let z = m / s;
    2.0 * s * normal_pdf(z) + m * (2.0 * normal_cdf(z) - 1.0)
}

/// Exact CRPS of an equal-weight Gaussian mixture:
/// `E|X − y| − ½E|X − X′|` with both expectations in closed form.
pub fn crps_mixture(mix: &Mixture, y: f64) -> f64 {
    let comps = mix.components();
    let k = comps.len() as f64;
    let first: f64 = comps.iter().map(|&(m, s)| abs_moment(y - m, s)).sum::<f64>() / k;
    let mut second = 0.0;
    for &(mi, si) in comps {
        for &(mj, sj) in comps {
            second += abs_moment(mi - mj, (si * si + sj * sj).sqrt());
        }
    }
    first - 0.5 * second / (k * k)
}

/// Energy-form CRPS from samples: `mean|Xᵢ − y| − ½ mean|Xᵢ − Xⱼ|`.
pub fn crps_samples(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("crps_samples needs at least one sample".into()));
    }
    let n = samples.len() as f64;
    let first = samples.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    // Σᵢⱼ|xᵢ − xⱼ| from sorted order in O(n log n).
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut pair_sum = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        pair_sum += x * (2.0 * i as f64 - n + 1.0);
    }
    Ok(first - pair_sum / (n * n))
}

/// Fraction of valid `y` inside `[lower, upper]` (bounds inclusive).
pub fn picp(lower: &[f64], upper: &[f64], y: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if lower.len() != y.len() || upper.len() != y.len() || mask.is_some_and(|m| m.len() != y.len()) {
        return Err(Error::Contract("picp arrays are misaligned".into()));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for i in 0..y.len() {
        if mask.is_none_or(|m| m[i]) {
            n += 1;
            if lower[i] <= y[i] && y[i] <= upper[i] {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no valid entries"));
    }
    Ok(hit as f64 / n as f64)
}

/// Bin index of a PIT value: `[k/N, (k+1)/N)` with the last bin closed.
fn pit_bin(pit: f64, bins: usize) -> usize {
    ((pit * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub fn pit_histogram(pits: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins < 2 {
        return Err(Error::Config(format!("pit histogram needs >= 2 bins, got {bins}")));
    }
    let mut counts = vec![0; bins];
    for &p in pits {
        counts[pit_bin(p, bins)] += 1;
    }
    Ok(counts)
}

/// QICE from PIT values: `y` falls in the n-th predictive quantile interval
/// exactly when its PIT falls in the n-th of `N` equal bins.
pub fn qice(pits: &[f64], n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::Config(format!("qice needs N >= 2, got {n_bins}")));
    }
    if pits.is_empty() {
        return Err(Error::UndefinedMetric("no valid entries"));
    }
    let counts = pit_histogram(pits, n_bins)?;
    let m = pits.len() as f64;
    let target = 1.0 / n_bins as f64;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 / m - target).abs())
        .sum::<f64>()
        / n_bins as f64)
}

/// `(1/RRMSE)/(1/RRMSE_base)`.
pub fn retention_ratio(rrmse_now: f64, rrmse_base: f64) -> Result<f64> {
    if !(rrmse_now > 0.0 && rrmse_base > 0.0) {
        return Err(Error::Domain(format!(
            "retention ratio needs positive inputs, got {rrmse_now} and {rrmse_base}"
        )));
    }
    Ok(rrmse_base / rrmse_now)
}

/// One scored target: truth, validity and its predictive distribution.
#[derive(Clone, Debug)]
pub struct Outcome<'a> {
    pub y: f64,
    pub valid: bool,
    pub predictive: &'a Mixture,
}

/// All scores for one grouping key. Undefined scores serialise as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin: Option<String>,
    pub n_valid: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub smape: Option<f64>,
    pub rrmse: Option<f64>,
    pub r2: Option<f64>,
    pub crps: Option<f64>,
    pub picp: Option<f64>,
    pub qice: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    pub alpha: f64,
    pub qice_bins: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            qice_bins: 10,
        }
    }
}

impl MetricReport {
    /// Score a group of outcomes (mixture mean as the point forecast).
    pub fn score(outcomes: &[Outcome], cfg: ScoreConfig) -> Result<Self> {
        let valid: Vec<&Outcome> = outcomes.iter().filter(|o| o.valid).collect();
        let y: Vec<f64> = valid.iter().map(|o| o.y).collect();
        let pred: Vec<f64> = valid.iter().map(|o| o.predictive.mean()).collect();
        let series = MaskedSeries::new(&y, &pred);
        let mut report = MetricReport {
            n_valid: valid.len(),
            ..Default::default()
        };
        if valid.is_empty() {
            return Ok(report);
        }
        let mut lower = Vec::with_capacity(y.len());
        let mut upper = Vec::with_capacity(y.len());
        for o in &valid {
            let (lo, hi) = o.predictive.interval(cfg.alpha)?;
            lower.push(lo);
            upper.push(hi);
        }
        let pits: Vec<f64> = valid.iter().map(|o| o.predictive.cdf(o.y)).collect();
        let crps = valid.iter().map(|o| crps_mixture(o.predictive, o.y)).sum::<f64>() / y.len() as f64;
        report.mae = defined(mae(&series))?;
        report.rmse = defined(rmse(&series))?;
        report.smape = defined(smape(&series))?;
        report.rrmse = defined(rrmse(&series))?;
        report.r2 = defined(r2(&series))?;
        report.crps = Some(crps);
        report.picp = defined(picp(&lower, &upper, &y, None))?;
        report.qice = defined(qice(&pits, cfg.qice_bins))?;
        Ok(report)
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    pub fn with_horizon(mut self, h: usize) -> Self {
        self.horizon = Some(h);
        self
    }

    pub fn with_bin(mut self, bin: impl Into<String>) -> Self {
        self.bin = Some(bin.into());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// Map undefined-metric signals to `None`, keep other errors.
fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Numerical CRPS `∫ (F(x) − 1{x ≥ y})² dx` by composite Simpson on
/// `[min(lo, y), max(hi, y)]`, split at `y` so the indicator jump is a panel edge.
pub fn crps_by_integration(cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, y: f64, panels: usize) -> f64 {
    let left = simpson(|x| cdf(x).powi(2), lo.min(y), y, panels);
    let right = simpson(|x| (1.0 - cdf(x)).powi(2), y, hi.max(y), panels);
    left + right
}

fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + h * i as f64);
    }
    s * h / 3.0
}
