//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

use crate::morpho::MeasureError;
use crate::niftiio::NiftiError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("voxel index {index:?} out of bounds for dims {dims:?}")]
    Bounds { index: [usize; 3], dims: [usize; 3] },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid orientation: {0}")]
    Orientation(String),

    #[error("label {label} is not defined in the label scheme")]
    UnknownLabel { label: u16 },

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error(transparent)]
    Measure(#[from] MeasureError),

    #[error("labeling failed: found {found} vertebra components, expected {expected} ({detail})")]
    Labeling {
        found: usize,
        expected: usize,
        detail: String,
    },

    #[error("manifest format error: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
