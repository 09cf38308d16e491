use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The two hypotheses are indistinguishable and the operation has no defined value.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The requested exact computation does not fit the configured budget.
    #[error("resource limit: {what} needs {required} entries (budget {budget}); estimated required nmax {required_nmax}")]
    Resource {
        what: &'static str,
        required: usize,
        budget: usize,
        required_nmax: usize,
    },

    /// Observed counts fall outside the support tabulated by an exact decision rule.
    #[error("counts (n_s={n_s}, n_i={n_i}) are outside the exact likelihood table")]
    OutOfSupport { n_s: u64, n_i: u64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
