use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("could not decode audio: {0}")]
    AudioDecode(String),

    #[error("empty audio clip")]
    EmptyClip,

    #[error("clip is silent (peak {peak:.2e} below {floor:.0e})")]
    SilentInput { peak: f32, floor: f32 },

    #[error("sample rate {0} Hz is outside the supported resampling range")]
    UnsupportedSampleRate(u32),

    #[error("clip is not canonical: {0}")]
    NotCanonical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("encoder checkpoint: {0}")]
    EncoderCheckpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("model checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
