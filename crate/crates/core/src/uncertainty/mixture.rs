use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::normal_cdf;

/// Equal-weight Gaussian mixture over `K` stochastic forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    comps: Vec<(f64, f64)>,
}

impl Mixture {
    /// Components as `(μ, σ)` pairs; needs `K ≥ 1` and every `σ > 0`.
    pub fn new(comps: Vec<(f64, f64)>) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if let Some(&(_, s)) = comps.iter().find(|(m, s)| !(*s > 0.0) || !m.is_finite() || !s.is_finite()) {
            return Err(Error::Domain(format!("mixture component sigma {s} is not a positive finite value")));
        }
        Ok(Self { comps })
    }

    pub fn single(mu: f64, sigma: f64) -> Self {
        Self {
            comps: vec![(mu, sigma)],
        }
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.comps
    }

    pub fn k(&self) -> usize {
        self.comps.len()
    }

    pub fn mean(&self) -> f64 {
        self.comps.iter().map(|c| c.0).sum::<f64>() / self.comps.len() as f64
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.comps
            .iter()
            .map(|&(m, s)| normal_cdf((y - m) / s))
            .sum::<f64>()
            / self.comps.len() as f64
    }

    /// Quantile by bisection on the CDF, to 1e-9 in probability.
    pub fn quantile(&self, p: f64) -> f64 {
        let lo_all = self.comps.iter().map(|&(m, s)| m - 40.0 * s).fold(f64::INFINITY, f64::min);
        let hi_all = self.comps.iter().map(|&(m, s)| m + 40.0 * s).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo_all, hi_all);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid);
            if (c - p).abs() <= 1e-12 || mid == lo || mid == hi {
                return mid;
            }
            if c < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Central `1 − α` interval `(q_{α/2}, q_{1−α/2})`.
    pub fn interval(&self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {alpha}")));
        }
        Ok((self.quantile(alpha / 2.0), self.quantile(1.0 - alpha / 2.0)))
    }

    pub fn decompose(&self) -> Decomposition {
        let k = self.comps.len() as f64;
        let mean = self.mean();
        let au = self.comps.iter().map(|c| c.1 * c.1).sum::<f64>() / k;
        let eu = self.comps.iter().map(|c| (c.0 - mean).powi(2)).sum::<f64>() / k;
        let total_var = au + eu;
        let pcv = (mean > 1.0).then(|| total_var.sqrt() / mean * 100.0);
        Decomposition {
            mean,
            au,
            eu,
            total_var,
            pcv,
        }
    }

    /// Single Gaussian with the mixture's mean and total variance.
    pub fn moment_matched(&self) -> Mixture {
        let d = self.decompose();
        Mixture::single(d.mean, d.total_var.sqrt())
    }
}

/// Law-of-total-variance split of a mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub mean: f64,
    /// Mean decoder variance (aleatoric).
    pub au: f64,
    /// Variance of the pass means (epistemic).
    pub eu: f64,
    pub total_var: f64,
    /// Percent; `None` when the mean is at most one flow unit.
    pub pcv: Option<f64>,
}

impl Decomposition {
    pub fn total_std(&self) -> f64 {
        self.total_var.sqrt()
    }
}

/// Which predictive distribution feeds CDFs, intervals and CRPS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveMode {
    #[default]
    Mixture,
    MomentMatched,
}

impl PredictiveMode {
    pub fn apply(self, mix: Mixture) -> Mixture {
        match self {
            PredictiveMode::Mixture => mix,
            PredictiveMode::MomentMatched => mix.moment_matched(),
        }
    }
}
