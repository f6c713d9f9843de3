use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum AmvisError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid axis {axis} for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("unknown tap '{0}'")]
    UnknownTap(String),

    #[error("unit index {index} out of range for axis extent {extent} at tap '{tap}'")]
    UnitIndexOutOfRange {
        tap: String,
        index: usize,
        extent: usize,
    },

    #[error("unit kind '{kind}' incompatible with rank-{rank} tap '{tap}'")]
    UnitKindMismatch {
        tap: String,
        kind: String,
        rank: usize,
    },

    #[error("invalid unit reference '{0}': expected tap:kind:index")]
    InvalidUnitRef(String),

    #[error("input {h}x{w} too small for the pooling stack (needs at least {min}x{min})")]
    InputTooSmall { h: usize, w: usize, min: usize },

    #[error("model config error: {0}")]
    ModelConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("run diverged at step {step}: objective is not finite (last finite step {last_finite})")]
    DivergedRun { step: usize, last_finite: usize },

    #[error("attack diverged at step {step}: gradient is not finite")]
    DivergedAttack { step: usize },

    #[error("corrupt weights file '{path}': {detail}")]
    CorruptWeights { path: String, detail: String },

    #[error("weights manifest mismatch: tensor '{name}': {detail}")]
    ManifestMismatch { name: String, detail: String },

    #[error("unsupported class count {0} (supported range 4..=10)")]
    UnsupportedClassCount(usize),

    #[error("config error in '{path}': {detail}")]
    Config { path: String, detail: String },

    #[error("i/o error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AmvisError>;

impl AmvisError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        AmvisError::Io {
            path: path.into(),
            source,
        }
    }
}
