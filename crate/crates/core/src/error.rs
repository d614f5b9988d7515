use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-triangular face at line {line}")]
    NonTriangularFace { line: usize },

    #[error("face index {index} out of range at line {line} ({count} vertices defined)")]
    IndexOutOfRange { line: usize, index: i64, count: usize },

    #[error("face {face} is degenerate")]
    DegenerateFace { face: usize },

    #[error("index {index} out of range (size {size})")]
    OutOfBounds { index: usize, size: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("mesh has zero vertices")]
    ZeroVertices,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("query point lies on the surface (distance {distance:e})")]
    OnSurface { distance: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
