//! Verification lab for the thickening library: exact enumeration oracles,
//! statistical tests, and the seeded experiment runner behind the CLI.

pub mod experiment;
pub mod oracle;
pub mod stats;

pub use experiment::{run_experiment, ExperimentReport, ExperimentSpec};
