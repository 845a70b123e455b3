use thiserror::Error;

use crate::corpus::Units;

/// Errors raised by parsing, alignment and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },

    #[error("line {line}: {tier} interval overlaps the previous one")]
    OverlappingIntervals { line: usize, tier: String },

    #[error("line {line}: {msg}")]
    NonMonotoneTimes { line: usize, msg: String },

    #[error("corpus contains no sentences")]
    EmptyCorpus,

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite value")]
    NonFiniteValue { line: usize },

    #[error("invalid frame clock: {0}")]
    InvalidClock(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sentence [{start_s}, {end_s}] has zero duration")]
    ZeroDurationSentence { start_s: f64, end_s: f64 },

    #[error("no features for sentence {sentence_id}")]
    MissingFeatures { sentence_id: usize },

    #[error("Sakoe-Chiba band of radius {radius} excludes every warping path")]
    BandInfeasible { radius: usize },

    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    AudioTooShort { samples: usize, window: usize },

    #[error("no normalization statistics for articulator {0:?}")]
    MissingStats(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("contours must be in millimeters, found {0:?}")]
    UnitsNotMm(Units),

    #[error("no frames left to evaluate")]
    EmptySelection,

    #[error("t-test needs at least 2 values per sample, got {a} and {b}")]
    SampleTooSmall { a: usize, b: usize },

    #[error("both samples have zero variance and different means")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MalformedLine { .. }
            | Error::OverlappingIntervals { .. }
            | Error::NonMonotoneTimes { .. }
            | Error::EmptyCorpus
            | Error::MalformedHeader(_)
            | Error::NonFiniteValue { .. } => 2,
            Error::DimensionMismatch { .. }
            | Error::InvalidClock(_)
            | Error::InvalidConfig(_)
            | Error::ZeroDurationSentence { .. }
            | Error::MissingFeatures { .. }
            | Error::MissingStats(_)
            | Error::ShapeMismatch(_)
            | Error::UnitsNotMm(_)
            | Error::SampleTooSmall { .. }
            | Error::Singular => 3,
            Error::BandInfeasible { .. } | Error::EmptySelection | Error::AudioTooShort { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
