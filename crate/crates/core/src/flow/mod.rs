//! Corruption schedules, datasets, and the exact analytical flow oracles.

pub mod analytical;
pub mod dataset;
pub mod schedule;

pub use analytical::AnalyticalFlow;
pub use dataset::Dataset;
pub use schedule::{conditional_flow, Schedule, ScheduleKind, DEFAULT_T_MIN};
