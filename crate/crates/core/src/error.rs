use std::path::PathBuf;

use crate::mesh::TriangleMesh;

/// Errors raised by the engine.
///
/// The variants are grouped by how a caller is expected to react: bad input
/// (unreadable or malformed files), contract violations (mismatched rigs,
/// empty regions), and numerical divergence during optimization.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("all target alphas are empty")]
    EmptyTarget,

    #[error("optimization diverged at stage {stage}, step {step}")]
    Diverged {
        stage: usize,
        step: usize,
        last_valid: Box<TriangleMesh>,
    },

    #[error("texture atlas of {resolution}x{resolution} cannot hold {charts} charts; use a larger atlas_resolution")]
    AtlasOverflow { resolution: usize, charts: usize },

    #[error("invalid input in {field}: {message}")]
    BadInput { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn bad_input(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::BadInput {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 = bad input, 3 = diverged, 4 = contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 3,
            Error::Contract(_) | Error::AtlasOverflow { .. } | Error::Structural(_) => 4,
            Error::EmptyTarget
            | Error::BadInput { .. }
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
