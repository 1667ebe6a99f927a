//! Harness side of the lab: synthetic data with ground truth, run
//! configuration, and the subcommand bodies behind the `stratcone` binary.
//! Lives as a library so the acceptance suite can drive the same code the
//! command line does.

pub mod config;
pub mod data;
pub mod run;
