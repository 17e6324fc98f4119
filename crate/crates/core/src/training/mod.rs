//! Episode construction, the negative-ELBO objective, AdamW with early
//! stopping, and ablation switches.

mod config;
mod loss;
mod optim;
mod sampler;
mod trainer;

pub use config::{Ablation, InferenceMode, TrainingConfig};
pub use loss::{elbo_graph, elbo_loss, elbo_value, kl_diag_gaussians, subsample_for_kl, KlSets, LossBreakdown, LossVars};
pub use optim::{clip_global_norm, AdamW};
pub use sampler::{build_episode, EpisodeLayout, EpisodeSampler};
pub use trainer::{train, validation_loss, EpochRecord, TrainState};

pub(crate) const STREAM_SPLIT: u64 = 0x7a1;
pub(crate) const STREAM_TRAIN: u64 = 0x7a2;
pub(crate) const STREAM_VAL: u64 = 0x7a3;
