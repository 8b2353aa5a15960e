//! Instrumented execution of partitioned graphs and ratio sweeps.

mod exec;
mod pipeline;
mod sweep;

pub use exec::{profile_forward, profile_sequential};
pub use pipeline::pipelined_forward;
pub use sweep::{
    sweep_ratios, EvalConfig, PlanConfig, SweepPoint, SweepReport, SweepRow, SWEEP_CSV_HEADER,
};
