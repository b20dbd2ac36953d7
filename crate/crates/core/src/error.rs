use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate visibility: no view shows the object")]
    DegenerateVisibility,

    #[error("empty object: no point falls inside the visibility masks")]
    EmptyObject,

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("occlusion canvas is empty even without erosion")]
    ErosionAnnihilated,

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
