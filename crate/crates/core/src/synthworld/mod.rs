//! Synthetic metropolitan sensing world and the on-disk dataset format.

mod fcd;
mod flow;
mod graph;
mod io;
mod sensors;
mod world;

pub use fcd::{estimated_penetration, simulate_fcd, FcdConfig, FcdProcess};
pub use flow::{diurnal_profile, generate_flow, FlowField};
pub use graph::{generate_graph, RoadClass, RoadGraph, Segment};
pub use io::{load_dataset, parse_manifest, render_dataset, save_dataset};
pub use sensors::{assign_sensors, inject_missing, MissingnessMask, SensorAssignment};
pub use world::{
    default_epoch, generate_world, FeatureMask, World, WorldConfig, FEATURE_DIM, FEATURE_NAMES,
};

pub const STEPS_PER_DAY: usize = 96;
pub const INTERVAL_MINUTES: u32 = 15;

pub(crate) const STREAM_GRAPH: u64 = 1;
pub(crate) const STREAM_FLOW: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_FCD: u64 = 4;
pub(crate) const STREAM_SENSORS: u64 = 5;
pub(crate) const STREAM_MISSING: u64 = 6;
