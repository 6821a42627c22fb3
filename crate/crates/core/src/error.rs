use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible geometry: could not place {nodes} nodes at >= {min_spacing} m spacing in {width}x{height} m after {attempts} attempts")]
    InfeasibleGeometry {
        nodes: usize,
        min_spacing: f64,
        width: f64,
        height: f64,
        attempts: usize,
    },

    #[error("missing signal: {0}")]
    MissingSignal(String),

    #[error("too few channels: need at least 2, got {0}")]
    TooFewChannels(usize),

    #[error("mismatched node sets: {0}")]
    MismatchedNodes(String),

    #[error("ambiguous direction of arrival (peak/mean = {confidence:.4})")]
    AmbiguousDoa { confidence: f64 },

    #[error("degenerate bearing geometry (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },

    #[error("length mismatch: {labels} labels vs {preds} predictions")]
    LengthMismatch { labels: usize, preds: usize },

    #[error("no non-active samples to compute a false alarm rate")]
    NoNonActiveSamples,

    #[error("invalid area: {0}")]
    InvalidArea(String),

    #[error("invalid packet: {0}")]
    InvalidPacket(String),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },

    #[error("truncated input: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
