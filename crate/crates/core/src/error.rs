use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("target Bell value {target} exceeds the value {max} reachable at full visibility")]
    TargetUnreachable { target: f64, max: f64 },

    #[error("invalid entropy curve: {0}")]
    InvalidCurve(String),

    #[error("tangent anchor {anchor} outside the tabulated range [{lo}, {hi}]")]
    AnchorOutOfRange { anchor: f64, lo: f64, hi: f64 },

    #[error("expected number of test rounds {expected} is below one")]
    InsufficientTestRounds { expected: f64 },

    #[error("no rounds fit in the chunk time")]
    NoRounds,

    #[error("dimension mismatch: expected {expected} bits, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by parameters that are well-formed but admit no
    /// certified output (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InsufficientTestRounds { .. } | Error::NoRounds | Error::TargetUnreachable { .. }
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
