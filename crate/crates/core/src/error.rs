use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TseError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported bit depth: maxval {maxval} (only 255 is supported)")]
    UnsupportedDepth { maxval: u32 },

    #[error("value {value} out of range at plane {plane}, pixel {pixel}")]
    Range { plane: usize, pixel: usize, value: f32 },

    #[error("probabilities at pixel {pixel} sum to {sum}, expected 1")]
    Normalization { pixel: usize, sum: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<TseError>,
    },
}

impl TseError {
    pub fn contract(msg: impl Into<String>) -> Self {
        TseError::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TseError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        TseError::Format {
            offset,
            message: message.into(),
        }
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        TseError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
