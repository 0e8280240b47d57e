//! Power and rate allocation for sequentially reconstructed, correlated
//! Gaussian sources sent over an energy-harvesting link.
//!
//! Rates are in nats and slots are zero-based throughout.

pub mod error;
pub mod model;
pub mod online;
pub mod oracle;
pub mod recovery;
pub mod tri;
pub mod solver;
pub mod waterfill;

pub use error::{Error, Result};
pub use model::{DistortionReport, Policy, Scenario};
pub use solver::{solve_delay_constrained, solve_delay_tolerant, DualState, Solution, SolveOptions, SolveTrace};
pub use tri::TriMatrix;
