//! Fault-tolerance planning for pipeline/data-parallel training.
//!
//! On every node failure the planner either reroutes the failed devices'
//! micro-batches to their data-parallel peers or rebuilds the parallel layout
//! for the survivors, whichever promises more samples per second once the
//! transition cost is paid. The simulator replays long runs under random
//! failures to compare these strategies.

pub mod cli;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod planner;
pub mod restorer;
pub mod simulator;

pub use error::{Error, Result};
