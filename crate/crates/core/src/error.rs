use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("cache does not belong to this network ({0})")]
    StaleCache(&'static str),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("non-finite gradient in parameter block {block}, index {index}")]
    NonFiniteGradient { block: usize, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport solve did not converge after {iterations} iterations (last max |dtau| = {last_change:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    #[error("sampling failed at cell ({i}, {j}): {reason}")]
    Sampling { i: usize, j: usize, reason: String },

    #[error("memory budget exceeded: need {needed} bytes, cap is {cap} bytes; use a smaller stencil size")]
    MemoryBudget { needed: u64, cap: u64 },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }
}
