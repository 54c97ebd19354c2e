//! Configuration, run orchestration and reporting behind the `smart` binary.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Mode, ProblemSource, RunConfig, ScheduleConfig};
pub use error::CliError;
pub use run::{execute, verify_replay, ReplayReport, Summary};
