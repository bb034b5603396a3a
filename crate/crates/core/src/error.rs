use std::io;

use thiserror::Error;
use vlpre_ot::OtError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target distribution sums to {sum}, expected 1")]
    InvalidDistribution { sum: f64 },

    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    VocabOutOfRange { token: usize, vocab_size: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("sequence too long: {tokens} tokens / {regions} regions (max {max_tokens} / {max_regions})")]
    SequenceTooLong {
        tokens: usize,
        regions: usize,
        max_tokens: usize,
        max_regions: usize,
    },

    #[error("objective needs a {expected} mask plan")]
    InvalidPlanModality { expected: &'static str },

    #[error("both modalities masked in one pass outside ablation mode")]
    DualModalityMask,

    #[error("invalid mask plan: {0}")]
    InvalidMaskPlan(String),

    #[error("negative sampling needs at least 2 instances, dataset has {size}")]
    DatasetTooSmall { size: usize },

    #[error("no pre-training tasks enabled")]
    EmptyTaskSet,

    #[error("non-finite loss at step {step} ({task})")]
    NonFiniteLoss {
        step: u64,
        task: String,
        /// JSON summary of parameter and gradient norms at the failing step.
        dump: String,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: field `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: &'static str,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error(transparent)]
    Ot(#[from] OtError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag for CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidDistribution { .. } => "invalid_distribution",
            Error::VocabOutOfRange { .. } => "vocab_out_of_range",
            Error::InvalidBox(_) => "invalid_box",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::InvalidPlanModality { .. } => "invalid_plan_modality",
            Error::DualModalityMask => "dual_modality_mask",
            Error::InvalidMaskPlan(_) => "invalid_mask_plan",
            Error::DatasetTooSmall { .. } => "dataset_too_small",
            Error::EmptyTaskSet => "empty_task_set",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::Parse { .. } => "parse_error",
            Error::SchemaViolation { .. } => "schema_violation",
            Error::Config(_) => "config",
            Error::DuplicateParameter(_) => "duplicate_parameter",
            Error::Ot(_) => "ot",
            Error::Io(_) => "io",
        }
    }
}
