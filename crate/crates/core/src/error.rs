use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decode error in field `{field}`: {reason}")]
    Decode { field: String, reason: String },

    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("insufficient frames: buffer of {len} samples is shorter than one {frame}-sample frame")]
    InsufficientFrames { len: usize, frame: usize },

    #[error("unsupported sample rate {0} Hz")]
    SampleRate(u32),

    #[error("zero vector has no cosine distance")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("k = {k} out of range for a store of {size} entries")]
    KOutOfRange { k: usize, size: usize },

    #[error("empty reference store")]
    EmptyStore,

    #[error("unknown reference id `{0}`")]
    UnknownReference(String),

    #[error("unknown spectral feature `{0}`")]
    UnknownFeature(String),

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("non-finite training loss at epoch {epoch} (lr = {lr})")]
    NonFiniteLoss { epoch: usize, lr: f64 },

    #[error("no decodable audio files in {0}")]
    NoDecodableFiles(PathBuf),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("run aborted at generation {generation}: {invalid} of {batch} candidates invalid")]
    TooManyInvalid {
        generation: u64,
        invalid: usize,
        batch: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
