//! Cycle-accurate model of the `K x K` TrIM systolic array.

mod array;
mod schedule;

pub use array::{run, run_with, PeState, RunOptions, Srb, TrimArray};
pub use schedule::{
    expected_operand, schedule_source, InputSource, Schedule, ScheduleDecision, ScheduleVariant,
};
