//! Experiment harnesses over a trained model and a world: uncertainty-guided
//! sensor placement, the damage/repair/addition lifecycle, density and FCD
//! sweeps, and penetration binning.

mod eval;
mod lifecycle;
mod placement;
mod stats;
mod sweep;

pub use eval::{
    evaluate, horizon_reports, point_pairs, point_scores, report_for, task_reports, EvalWindowing, InferenceSpec,
    TargetOutcome,
};
pub use lifecycle::{run_lifecycle, LifecycleDay, LifecycleReport, LifecycleSchedule, SensingState, Stage, StageKind};
pub use placement::{
    order_by_score, rank_candidates, run_placement, uncertainty_scores, PlacementKind, PlacementReport, PlacementRound,
    PlacementStrategy,
};
pub use stats::{paired_signs, penetration_binning, quantile_sorted, segment_rrmse, sign_test_p, PenetrationBin};
pub use sweep::{fit, fit_and_score, run_density_sweep, run_fcd_ablation, spaced_windows, AblationPoint, SweepPoint, TrainSetup};

pub(crate) const STREAM_PLACEMENT: u64 = 0x5c1;
pub(crate) const STREAM_LIFECYCLE: u64 = 0x5c2;
