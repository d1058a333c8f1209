use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The Fock cutoff leaves more probability outside the truncated space
    /// than the configured tolerance allows.
    #[error(
        "truncation deficit {deficit:.3e} at cutoff {cutoff} exceeds tolerance {tolerance:.1e}; \
         cutoff {required_cutoff} is required"
    )]
    Truncation {
        deficit: f64,
        tolerance: f64,
        cutoff: usize,
        required_cutoff: usize,
    },

    #[error("invalid argument: {0}")]
    Usage(String),

    /// No (n_r, {m_q}) tuple survived the diagonal rule.
    #[error("post-selection admitted no measurement records ({dropped} tuples dropped outside the transmitted cutoff)")]
    EmptySelection { dropped: usize },

    #[error("post-selection has zero total weight on the supplied state")]
    DegenerateSelection,

    #[error("state norm {norm:.3e} is too small to normalize")]
    DegenerateState { norm: f64 },

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
