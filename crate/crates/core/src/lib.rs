//! Stochastic monotone aggregated root-finding.
//!
//! Finds a zero of `S = (1/n) sum_i S_i` over a block product space by sampling
//! blocks and operators, reading possibly stale iterates, and maintaining a
//! table of dual estimates `y_{i,j}`.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asyncexec;
pub mod blockspace;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod operators;
pub mod presets;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod stepsize;
pub mod suites;

pub use blockspace::{BlockLayout, BlockVector, Metric};
pub use engine::{DualInit, RunOptions, Smart, SmartState, StepSizes, StopRule};
pub use error::{Error, Result};
pub use operators::{Operator, OperatorFamily};
pub use sampling::{SamplingLaw, TriggerGraph};
pub use schedule::DelaySchedule;
