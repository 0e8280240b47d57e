//! Experiment harness: reads a TOML configuration, runs one of the solver
//! modes over its grid of cells, and writes deterministic CSV tables.

pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Mode};
pub use output::{num, write_outputs, Artifact};
pub use run::{run, RunError, RunReport};

/// Exit status for an invalid configuration.
pub const EXIT_INVALID_CONFIG: i32 = 2;
/// Exit status when some solve did not converge; outputs are still written.
pub const EXIT_NOT_CONVERGED: i32 = 3;
