use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format for {path}: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("image {path} has zero size")]
    EmptyImage { path: PathBuf },

    #[error("image {width}x{height} is smaller than one {block_size}x{block_size} block")]
    ImageTooSmall {
        width: usize,
        height: usize,
        block_size: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("empty input: {0}")]
    Empty(String),

    #[error("grid has {rows} rows, exact inference is limited to {limit}")]
    HeightLimit { rows: usize, limit: usize },
    #[error("grid has {sites} sites, brute-force enumeration is limited to {limit}")]
    TooManySites { sites: usize, limit: usize },
    #[error("training diverged in epoch {epoch} with learning rate {alpha}")]
    Diverged { epoch: usize, alpha: f64 },

    #[error("config {location}: {message}")]
    Config { location: String, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("no salient training samples: every ground-truth particle is background")]
    NoSalientSamples,
    #[error("model file: {0}")]
    Model(String),
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
