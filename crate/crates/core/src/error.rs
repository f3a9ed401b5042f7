use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("degenerate geometry: subject and object boxes are identical")]
    DegenerateGeometry,
    #[error("scene has {0} usable objects, at least 2 are required")]
    TooFewObjects(usize),
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid scene graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("tape already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("triplet does not belong to this embedding set")]
    ForeignTriplet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical divergence at epoch {epoch}, step {step}")]
    NumericalDivergence { epoch: usize, step: usize },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("database is empty")]
    EmptyDatabase,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
