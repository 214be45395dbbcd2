use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("self-loop at node {0}")]
    SelfLoop(usize),

    #[error("edge weight {weight} on ({u}, {v}) must be positive and finite")]
    BadWeight { u: usize, v: usize, weight: f64 },

    #[error("node {0} is isolated (degree 0)")]
    IsolatedNode(usize),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("graph has no edges")]
    NoEdges,

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("unsupervised labeling is constant; structural heterophily undefined")]
    DegenerateLabeling { labeling: Vec<usize> },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step} (loss is not finite)")]
    Divergence { step: usize },

    #[error("no connected sample after {attempts} attempts")]
    RetryLimit { attempts: usize },

    #[error("empty border (training) set")]
    EmptyBorder,

    #[error("loss node must be 1x1, found {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(&'static str),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {msg}", file.display())]
    Inconsistent { file: PathBuf, msg: String },

    #[error("{}: {source}", file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            found,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
