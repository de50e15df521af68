use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("face {face} repeats a vertex")]
    DegenerateFace { face: usize },

    #[error("mesh is not a closed, consistently oriented solid")]
    NotSolid,

    #[error("ray query remained degenerate after {retries} perturbations")]
    DegenerateRay { retries: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("point lies outside the box")]
    OutsideBox,

    #[error("degenerate triangle (area {area:e})")]
    DegenerateTriangle { area: f64 },

    #[error("cannot form {requested} clusters from {available} faces")]
    TooFewFaces { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tree format error: {0}")]
    TreeFormat(String),

    #[error("mesh hash mismatch: tree was built for {expected}, mesh is {found}")]
    MeshMismatch { expected: String, found: String },
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
