use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("input too small: {0}")]
    InputTooSmall(String),
    #[error("vertex ({x}, {y}) outside {width}x{height} frame")]
    OutOfFrame { x: f64, y: f64, width: usize, height: usize },
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("warped vertex left the frame; resample the homography")]
    SampleRejected,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("need {needed} samples for the requested split, have {available} (short by {})", needed - available)]
    SplitSize { needed: usize, available: usize },
    #[error("non-finite loss at step {step}: det={det}, seg={seg}")]
    NonFiniteLoss { step: u64, det: f64, seg: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
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
    #[error("codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config(_)
                | Self::Shape(_)
                | Self::InputTooSmall(_)
                | Self::OutOfFrame { .. }
                | Self::DegenerateRegion(_)
                | Self::DegenerateConfiguration(_)
                | Self::Bounds(_)
                | Self::SplitSize { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
