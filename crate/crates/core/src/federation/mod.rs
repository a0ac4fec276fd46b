//! Federated training loop for the sparse ProxSkip family and its baselines.

mod engine;
mod probe;
mod schedule;
mod step;
mod variant;

pub use engine::{
    initial_model, run_algorithm, run_algorithm_with_sink, seed_invariant, AlgorithmConfig, DivergenceGuard,
    DivergenceInfo, RunResult,
};
pub use probe::fixed_point_probe;
pub use schedule::{local_steps_per_round, make_schedule, Schedule, ScheduleMode};
pub use step::{
    communication_round, local_step_plain, local_step_soft, local_step_ste, local_step_topk, skip_round, ClientState,
    RoundOutcome, StepRule,
};
pub use variant::{ControlReference, LocalStepKind, Variant, ALL_VARIANTS};
