//! File formats, configuration, GeoJSON emission and the command layer
//! behind the `mastgeoref` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod geojson;
pub mod imageio;
pub mod schema;

use crate::evalmetrics::EvalError;
use crate::geodesy::GeoError;
use crate::homography::HomographyError;
use crate::maskops::MaskError;
use crate::motionheading::MotionError;
use crate::scatter2d::ScatterError;
use crate::slicemerge::SliceError;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const SCHEMA: i32 = 3;
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    pub fn schema(path: &Path, msg: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use PipelineError as E;
        match self {
            E::Usage(_) => exit::USAGE,
            E::Schema { .. } => exit::SCHEMA,
            E::Homography(
                HomographyError::TooFewCorrespondences(_) | HomographyError::DegenerateConfiguration(_),
            ) => exit::USAGE,
            E::Slice(
                SliceError::InvalidOverlap(_)
                | SliceError::ZeroSliceSize
                | SliceError::InvalidThreshold(_),
            ) => exit::USAGE,
            E::Slice(SliceError::PlanParse { .. }) => exit::SCHEMA,
            E::Eval(EvalError::InvalidThresholds | EvalError::InvalidBuckets(_)) => exit::USAGE,
            E::Eval(EvalError::MissingMask(_)) => exit::SCHEMA,
            E::Motion(MotionError::InvalidFlow(_)) => exit::SCHEMA,
            E::Scatter(ScatterError::InvalidBankParams(_) | ScatterError::ImageTooSmall(..)) => {
                exit::USAGE
            }
            E::Scatter(ScatterError::InvalidImage(_)) => exit::SCHEMA,
            _ => exit::RUNTIME,
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}
