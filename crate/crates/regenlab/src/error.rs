use crate::pathsim::SubordinatorPath;

/// Crate-wide error type. Numeric routines report the accuracy they actually
/// achieved so callers can decide whether a looser tolerance is acceptable.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{op} is not supported for the {family} family")]
    Unsupported { op: &'static str, family: &'static str },

    #[error("{op}: achieved accuracy {achieved:.3e} is worse than required {required:.3e}")]
    Numeric {
        op: &'static str,
        achieved: f64,
        required: f64,
    },

    #[error("stop rule not reached after {jumps} jumps; partial path attached")]
    HorizonExceeded {
        jumps: u64,
        partial: Box<SubordinatorPath>,
    },

    #[error("point {point} lies above the unresolved frontier {frontier}")]
    UnresolvedRegion { point: f64, frontier: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
