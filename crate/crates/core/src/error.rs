use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the synthesis / retrieval chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error(
        "degenerate kernel: sigma_x={sigma_x}, sigma_y={sigma_y} (use a delta kernel instead)"
    )]
    DegenerateKernel { sigma_x: f64, sigma_y: f64 },

    #[error(
        "kernel support of radius {radius} px exceeds the {width}x{height} image; pad the input"
    )]
    KernelTooLarge {
        radius: usize,
        width: usize,
        height: usize,
    },

    #[error("window at ({x}, {y}) with kernel size {k} leaves the image bounds")]
    OutOfBounds { x: usize, y: usize, k: usize },

    #[error("correlation fit is rank deficient for k={k}, p={period}")]
    RankDeficient { k: usize, period: f64 },

    #[error("grid period estimation failed: {0}")]
    PeriodEstimation(String),

    #[error("invalid pixel: {0}")]
    InvalidPixel(&'static str),

    #[error("region of interest '{0}' has no valid pixels")]
    EmptyRoi(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Attach a pipeline stage name to an error.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
