//! Task-aware attentive neural processes for traffic state inference from
//! sparse fixed sensors and floating-car data.

pub mod error;
pub mod fsutil;
pub mod metrics;
pub mod npmodel;
pub mod scenarios;
pub mod synthworld;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use npmodel::{Model, Model32, Model64, ModelConfig, Variant};
pub use synthworld::{World, WorldConfig};
pub use training::{TrainState, TrainingConfig};

/// Training state in single precision, the on-disk checkpoint precision.
pub type TrainState32 = TrainState<f32>;
/// Training state in double precision.
pub type TrainState64 = TrainState<f64>;
