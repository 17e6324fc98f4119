use diffcore::{RngStream, Scalar};

use super::{Decomposition, Mixture, PredictiveMode};
use crate::error::{Error, Result};
use crate::npmodel::{Episode, ForwardMode, GaussianPrediction, Model};

/// Default number of Monte-Carlo passes.
pub const DEFAULT_K: usize = 10;

/// K stochastic predictions for the same targets.
#[derive(Clone, Debug, PartialEq)]
pub struct McSampleSet {
    samples: Vec<GaussianPrediction>,
}

impl McSampleSet {
    pub fn new(samples: Vec<GaussianPrediction>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("sample set needs K >= 1".into()))?;
        let m = first.mu.len();
        for s in &samples {
            if s.mu.len() != m || s.sigma.len() != m {
                return Err(Error::Contract("samples cover different targets".into()));
            }
            if s.sigma.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Domain("sample σ must be positive".into()));
            }
        }
        Ok(Self { samples })
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn n_targets(&self) -> usize {
        self.samples[0].mu.len()
    }

    pub fn samples(&self) -> &[GaussianPrediction] {
        &self.samples
    }

    /// Equal-weight mixture over the passes for target `i`.
    pub fn mixture(&self, i: usize) -> Mixture {
        let comps = self.samples.iter().map(|s| (s.mu[i], s.sigma[i])).collect();
        Mixture::new(comps).expect("validated on construction")
    }

    pub fn predictive(&self, mode: PredictiveMode) -> Vec<Mixture> {
        (0..self.n_targets()).map(|i| mode.apply(self.mixture(i))).collect()
    }

    pub fn decompose(&self) -> Vec<Decomposition> {
        (0..self.n_targets()).map(|i| self.mixture(i).decompose()).collect()
    }
}

/// K independent `InferMc` passes; pass `k` draws from `RngStream(seed, k)`.
pub fn mc_infer<S: Scalar>(model: &Model<S>, ep: &Episode, k: usize, seed: u64) -> Result<McSampleSet> {
    if k < 1 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let samples = (0..k)
        .map(|pass| {
            let mut rng = RngStream::new(seed, pass as u64);
            model.forward(ep, ForwardMode::InferMc, &mut rng).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    McSampleSet::new(samples)
}

/// One deterministic pass wrapped as a single-sample set.
pub fn plain_infer<S: Scalar>(model: &Model<S>, ep: &Episode) -> Result<McSampleSet> {
    let (p, _) = model.forward(ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0))?;
    McSampleSet::new(vec![p])
}
