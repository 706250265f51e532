use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("tape does not match network: {0}")]
    Tape(String),

    #[error("divergence at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("VAF approximation failed: max error {max_error:.4} exceeds tolerance {tolerance:.4}")]
    Approximation { max_error: f64, tolerance: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("class {class} is absent from the training partition of fold {fold}")]
    Stratification { fold: usize, class: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("model file: {0}")]
    Model(#[from] serde_json::Error),

    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for errors caused by numeric blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFiniteGradient { .. })
    }
}
