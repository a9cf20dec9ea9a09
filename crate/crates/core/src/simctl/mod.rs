//! Experiment orchestration behind the CLI.
//!
//! Configuration parsing and random streams feed the drivers in [`runner`],
//! [`sweep`] and [`compare`], which all report through [`metrics`].

pub mod compare;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod streams;
pub mod sweep;

pub use compare::{compare, write_comparison, Comparison};
pub use config::{load_config, parse_config, ExperimentConfig};
pub use metrics::{MetricsRow, Mode, Summary};
pub use runner::{run, run_in_memory, RunResult};
pub use streams::derive_stream;
pub use sweep::{sweep, write_sweep, SweepReport};
