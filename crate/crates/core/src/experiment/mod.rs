//! The closed loop: truth field, sensor, filter and controller wired
//! together, plus the ensemble protocols built on it.

mod config;
mod engine;
mod ensemble;
mod protocols;

pub use config::{default_schedule, DistanceKind, LoopConfig, StopRule, TruthRelaxation};
pub use engine::{
    run_feedback_trajectory, run_recorded, trajectory_rng, InitialStates, IterationRow, LoopEngine, StepView,
    StopReason, TrajectoryOutcome, TrajectoryRecord,
};
pub use ensemble::{run_ensemble, EnsembleStats, TrajectorySummary, BATCH_SIZE, CONVERGENCE_FRACTION};
pub use protocols::{
    recovery_metrics, run_jump_recovery, run_trial_and_error, tune_lambda, LambdaTuning, RecoveryMetrics,
    ALPHA_WINDOW, RETURN_LEVEL,
};
