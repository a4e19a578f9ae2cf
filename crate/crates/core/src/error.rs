use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("power iteration did not converge in {iterations} iterations (last estimate {estimate})")]
    PowerIteration { iterations: usize, estimate: f64 },

    #[error("{what} did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("graph {graph}: {source}")]
    Graph {
        graph: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("step {step}: non-finite {what}")]
    NonFiniteStep { step: usize, what: &'static str },

    #[error("empty label mask")]
    EmptyMask,

    #[error("empty batch")]
    EmptyBatch,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("shape mismatch in {}: {detail}", path.display())]
    ShapeMismatch { path: PathBuf, detail: String },

    #[error("non-finite value in {}", .0.display())]
    NonFiniteFile(PathBuf),

    #[error("malformed {}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_graph(self, graph: usize) -> Self {
        Error::Graph {
            graph,
            source: Box::new(self),
        }
    }
}
