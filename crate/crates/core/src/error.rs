use thiserror::Error;

use crate::polytope_lp::Basis;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("state {state} out of range for variable {var} with {cardinality} states")]
    InvalidState {
        var: usize,
        state: usize,
        cardinality: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("simplex iteration limit of {iterations} exceeded")]
    IterationLimit { iterations: usize, best_basis: Basis },

    #[error("linear program is {0}")]
    NotOptimal(&'static str),

    #[error("branch-and-bound node limit of {0} exceeded")]
    NodeLimit(usize),

    #[error("state space of {size} labelings exceeds the enumeration limit of {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },

    #[error("unsupported model class: {0}")]
    UnsupportedClass(String),

    #[error("dataset has no instances{0}")]
    EmptyDataset(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::IterationLimit { .. } | Error::NotOptimal(_) | Error::NodeLimit(_) => true,
            Error::Training { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
