use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite activation in encoder layer {layer} ({op})")]
    Numerical { layer: usize, op: &'static str },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("gradient recording is disabled on this tape")]
    GradDisabled,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("target of {target_len} tokens needs at least {required} frames, got {frames}")]
    InfeasibleTarget {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate noise bias: pooled vector has zero rms")]
    DegenerateBias,

    #[error("training failed: {reason} (last loss {last_loss:?})")]
    TrainingFailure {
        reason: String,
        last_loss: Option<f64>,
        curve: Vec<(usize, f64)>,
    },

    #[error("loss became NaN at step {step}")]
    NanLoss { step: usize },

    #[error("checkpoint error in {section}: {detail}")]
    Checkpoint { section: String, detail: String },

    #[error("config error at `{path}`: {detail}")]
    Config { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
