use thiserror::Error;

/// Errors raised by the allocation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("invalid input for `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    /// Vector or matrix sizes disagree.
    #[error("dimension mismatch for `{field}`: expected {expected}, got {actual}")]
    Dimension {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The instance admits no feasible point.
    #[error("infeasible instance at slot {slot}: {reason}")]
    InfeasibleInstance { slot: usize, reason: String },

    /// The individual-rate system has no nonnegative solution. The vector
    /// `certificate` satisfies `yᵀA ≥ 0` and `yᵀb < 0`.
    #[error("individual-rate system is infeasible (certificate value {value:.3e})")]
    Infeasible { certificate: Vec<f64>, value: f64 },

    /// The brute-force oracle refuses instances that are too large.
    #[error("brute-force search supports at most {max} slots, got {actual}")]
    TooLarge { max: usize, actual: usize },

    /// A numerical routine failed to make progress.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        field,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(field: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            field,
            expected,
            actual,
        })
    }
}
