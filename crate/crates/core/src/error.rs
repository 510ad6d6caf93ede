//! Error types shared by all modules.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the analysis routines.
///
/// `InvalidInput` and `InvalidSignal` indicate malformed data from the
/// caller; the remaining variants are numerical conditions detected while
/// computing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    /// Eigenvalue clustering produced rank-deficient group bases.
    #[error("ill-conditioned real-part split: {0}")]
    IllConditionedSplit(String),

    /// A chain solve needed irreducibility (or reachability) it did not have.
    #[error("non-ergodic input: {0}")]
    NonErgodicInput(String),

    /// A timescale or limit-rate fit did not resolve on the given grid.
    #[error("scale resolution failure: {0}")]
    ScaleResolutionFailure(String),

    /// The rate family has no divergent timescale; use the plain Markov
    /// process machinery instead.
    #[error("not a fast family: {0}")]
    NotAFastFamily(String),

    /// The averaged matrix has a single real-part group, so there is no
    /// dominant eigenspace to concentrate on.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True when the error names bad caller-provided data rather than a
    /// numerical condition.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::InvalidSignal(_))
    }
}
