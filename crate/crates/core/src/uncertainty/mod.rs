//! MC-Dropout predictive mixtures, the aleatoric/epistemic split, intervals
//! and uncertainty-based screening.

mod mc;
mod mixture;
mod screening;

pub use mc::{mc_infer, plain_infer, McSampleSet, DEFAULT_K};
pub use mixture::{Decomposition, Mixture, PredictiveMode};
pub use screening::{error_rejection_curve, pcv_bins, PcvBin, RejectionPoint};
