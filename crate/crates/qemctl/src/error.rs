//! Crate-wide error type.
//!
//! Every fallible public function in this crate returns [`Result`]. Variants
//! are grouped by the layer that raises them so callers (and the CLI exit-code
//! mapping) can distinguish configuration mistakes from runtime failures.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration file, section, or CLI override.
    #[error("config error: {0}")]
    Config(String),

    /// A code distance outside the supported odd set.
    #[error("invalid code distance {0}: supported distances are 1, 3, 5")]
    InvalidDistance(u32),

    /// The plant was stepped past its configured horizon.
    #[error("run horizon exhausted: cycle {cycle} >= t_run {t_run}")]
    EndOfRun { cycle: u32, t_run: u32 },

    /// A measurement bitstring with the wrong length or alphabet.
    #[error("invalid bitstring {0:?}: need an odd-length string over '0'/'1'")]
    InvalidBits(String),

    /// A probability vector that is not a distribution.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// An empirical error rate of exactly zero where a ratio denominator is needed.
    #[error("degenerate ratio: larger-code logical error rate is zero")]
    DegenerateRatio,

    /// Empty or dimension-mismatched training data.
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    /// Vector/matrix dimension mismatch between model and input.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A linear-algebra operation failed (e.g. a Gram matrix lost positive
    /// definiteness despite jitter).
    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    /// Optimisation produced a non-finite objective or parameter.
    #[error("optimisation diverged: {0}")]
    Diverged(String),

    /// A non-finite reward or feature reached a model update.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A context id outside the trained label range.
    #[error("unknown context id {id}: trained tree has {known} contexts")]
    UnknownContext { id: usize, known: usize },

    /// A persisted artifact whose content hash does not match its payload.
    #[error("artifact integrity check failed for {path}: {detail}")]
    Integrity { path: String, detail: String },

    /// An analytic self-check that did not hold at runtime.
    #[error("self-check failed: {0}")]
    SelfCheck(String),

    /// Malformed line in a telemetry log.
    #[error("telemetry parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error is a configuration/usage problem rather than a
    /// runtime failure. The CLI maps these to a distinct exit code.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
