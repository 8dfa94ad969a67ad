use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the harness can report.
///
/// Variants are grouped by the subsystem that raises them. The CLI maps
/// [`Error::is_validation`] failures to exit code 2 and everything else to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // audio / signal
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("signal too short: need {needed} samples, have {actual}")]
    SignalTooShort { needed: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // token grids and codecs
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },
    #[error(
        "token out of range: token {token} at frame {frame}, codebook {codebook} (size {size})"
    )]
    TokenOutOfRange {
        frame: usize,
        codebook: usize,
        token: u32,
        size: u32,
    },
    #[error("invalid token grid: {0}")]
    InvalidGrid(String),
    #[error("no tokens for utterance {0:?}")]
    NoTokensForUtterance(String),
    #[error("descriptor mismatch: {0}")]
    DescriptorMismatch(String),
    #[error("decode unavailable for codec {0:?}")]
    DecodeUnavailable(String),

    // ref-rvq
    #[error("insufficient frames: need at least {needed}, corpus yields {actual}")]
    InsufficientFrames { needed: usize, actual: usize },
    #[error("stage {stage} could not be trained with {k} distinct centroids")]
    DegenerateCodebook { stage: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // metrics
    #[error("insufficient non-silent duration: {frames} frames, need {needed}")]
    InsufficientSpeech { frames: usize, needed: usize },
    #[error("empty reference")]
    EmptyReference,
    #[error("all-zero reference signal")]
    ZeroReference,
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    // language model
    #[error("empty training data")]
    EmptyTrainingData,
    #[error("invalid log-probability {value} at index {index}")]
    PositiveLogProb { index: usize, value: f64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    // probe
    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    // analysis / orchestration
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a description of the utterance or experiment that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs (configs, manifests, files)
    /// rather than failures while running an experiment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_validation(),
            Error::Validation(_)
            | Error::MalformedContainer(_)
            | Error::UnsupportedEncoding(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::TokenOutOfRange { .. }
            | Error::InvalidGrid(_)
            | Error::DescriptorMismatch(_)
            | Error::InvalidLabels(_)
            | Error::InvalidParameter(_) => true,
            _ => false,
        }
    }
}
