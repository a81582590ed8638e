use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed array header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported dtype {descr:?} in {path} (expected '<f4' or '<f8')")]
    UnsupportedDtype { path: PathBuf, descr: String },

    #[error("array in {path} has {ndim} dimensions, only 2-D arrays are supported")]
    NotTwoDimensional { path: PathBuf, ndim: usize },

    #[error("payload of {path} is {actual} bytes, header declares {expected}")]
    PayloadMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),

    #[error("pair {id:?}: faithful matrix has {faithful} columns, hallucinated has {hallucinated}")]
    PairDimensionMismatch {
        id: String,
        faithful: usize,
        hallucinated: usize,
    },

    #[error("layer {layer}: pair {id:?} has dimension {found}, expected {expected}")]
    LayerDimensionMismatch {
        layer: u32,
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("cannot stack an empty list of pairs")]
    NoPairs,

    #[error("pairs disagree: {0}")]
    MixedPairs(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("selected row {index} is out of range for a matrix with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, layer: u32) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                layer,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerical kernels, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::Layer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
