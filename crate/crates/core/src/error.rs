use std::path::PathBuf;

/// Errors raised by the detection, calibration and streak routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A detector was used in a way its state machine forbids (e.g. stepped after stopping).
    #[error("usage error: {0}")]
    Usage(String),

    /// The calibration bracket does not straddle the target false-alarm probability.
    #[error(
        "threshold bracket [{lo}, {hi}] does not straddle alpha={alpha}: \
         LPFA(lo)={lpfa_lo}, LPFA(hi)={lpfa_hi}"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        alpha: f64,
        lpfa_lo: f64,
        lpfa_hi: f64,
    },

    /// An exhaustive enumeration would exceed its budget.
    #[error("enumeration of {required} sequences exceeds the budget of {budget}")]
    Size { required: u128, budget: u128 },

    /// A streak candidate was rejected (non-positive amplitude at the optimum).
    #[error("streak rejected: {0}")]
    Rejected(String),

    /// A frame file is malformed or inconsistent with its sidecar.
    #[error("corrupt frame {path}: {reason}")]
    CorruptFrame { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
