//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/network shape disagreement.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A public operation produced or was handed a NaN/Inf.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Classification target outside `[0, classes)`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Loss kind and target kind disagree (e.g. MSE with class labels).
    #[error("target mismatch: {0}")]
    TargetMismatch(String),

    /// A precondition on a plain argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Episode request cannot be satisfied by the source.
    #[error("requested {requested} classes but source has {available}")]
    NotEnoughClasses { requested: usize, available: usize },

    /// Class split would leave one side empty.
    #[error("degenerate class split: {0}")]
    DegenerateSplit(String),

    /// An image class has too few images for the requested episode.
    #[error("class '{class}' has {have} images, episode needs {need}")]
    ClassTooFewImages { class: String, have: usize, need: usize },

    /// PGM parse failure.
    #[error("bad PGM file {path}: {reason}")]
    Pgm { path: PathBuf, reason: String },

    /// Filesystem problem, with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Masked training was started on a network with nonzeros off the mask.
    #[error("mask invariant violated: {0}")]
    MaskInvariant(String),

    /// Resuming inside a pruning phase without the phase's mask.
    #[error("schedule resume requires a mask: {0}")]
    MaskRequired(String),

    /// Config file problem, naming the offending key or line.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("bad magic in checkpoint {path}")]
    BadMagic { path: PathBuf },

    /// Checkpoint format version is not supported.
    #[error("unsupported checkpoint version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    /// Checkpoint ended before all declared fields were read.
    #[error("truncated checkpoint {path}: {reason}")]
    Truncated { path: PathBuf, reason: String },

    /// Metrics CSV rows could not be paired into gap entries.
    #[error("gap curve error: {0}")]
    GapCurve(String),
}
