//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. Inputs are
//! validated at construction boundaries (boxes, scores, marginals, configs)
//! so the numerical kernels can assume well-formed data; anything rejected
//! here is a caller error, not a recoverable condition to repair silently.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A bounding box with non-positive width/height or non-finite fields.
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    /// An affine transform whose linear part is singular, or one that
    /// collapses a box to zero extent — degenerate augmentation.
    #[error("degenerate affine transform: {0}")]
    DegenerateTransform(String),

    /// A detection score outside `[0, 1]` or non-finite.
    #[error("invalid detection score {0}: must be finite and within [0, 1]")]
    InvalidScore(f64),

    /// An embedding that is empty, non-finite, or (where a direction is
    /// required) has zero norm.
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    /// Two inputs that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An input that must be non-empty is empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A matrix containing NaN/inf where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Marginals that are negative, non-finite, or whose sums disagree
    /// beyond tolerance (infeasible transport problem).
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    /// A configuration value outside its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Sinkhorn scaling in standard mode hit numerical underflow; retry with
    /// log-domain stabilization or a larger regularization strength.
    #[error(
        "sinkhorn underflow at regularization {reg}: kernel row/column sums \
         vanished; enable log-domain stabilization or increase regularization"
    )]
    SinkhornUnderflow { reg: f64 },

    /// The exhaustive assignment oracle is restricted to tiny problems.
    #[error("assignment oracle limited to {max}x{max} matrices, got {size}x{size}")]
    OracleTooLarge { size: usize, max: usize },

    /// Soft label selection needs at least two real columns so that the
    /// positive and negative column are distinct.
    #[error("soft labels require at least 2 real columns, got {0}")]
    SoftLabelsNeedColumns(usize),

    /// A sampled proposal references a row (track) that does not exist.
    #[error("proposal owner {owner} out of range for {rows} rows")]
    ProposalOwnerOutOfRange { owner: usize, rows: usize },

    /// Stratified negative sampling could not satisfy the requested counts.
    #[error("proposal sampling exhausted after {attempts} attempts: {0}", .message)]
    SamplingExhausted { message: String, attempts: usize },

    /// An augmented view was supplied without the inverse transform needed
    /// to map its detections back to original coordinates.
    #[error("augmented view is missing its inverse transform")]
    MissingInverseTransform,

    /// The selected association strategy needs per-detection embeddings.
    #[error("association mode {0} requires detection embeddings")]
    EmbeddingsRequired(&'static str),

    /// Ground truth and results cover different frame ranges.
    #[error("misaligned sequences: ground truth has {gt_frames} frames, results have {result_frames}")]
    MisalignedFrames {
        gt_frames: usize,
        result_frames: usize,
    },

    /// A text record that failed to parse, with its 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Configuration file rejected by the TOML deserializer (unknown keys,
    /// wrong types, syntax errors).
    #[error("config error: {0}")]
    ConfigParse(String),

    /// Underlying I/O failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attaches a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
