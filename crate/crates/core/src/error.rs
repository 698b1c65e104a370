use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range 1..={max}")]
    OutOfRange { index: usize, max: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("time {t} is not a node of the path grid")]
    NotOnGrid { t: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Gramian is singular to tolerance (condition estimate {condition:.3e}){}", window_suffix(.window))]
    Conditioning { condition: f64, window: Option<usize> },

    #[error("terminal norm {terminal:.3e} exceeds tolerance {tolerance:.3e}")]
    NonConvergentDecay { terminal: f64, tolerance: f64 },

    #[error("source term is not bounded in the weighted space: {0}")]
    UnboundedSource(String),

    #[error("fixed-point map is not contracting (ratios {ratios:?}); try a smaller truncation radius")]
    Divergence { ratios: [f64; 3] },

    #[error("fixed point not reached after {0} iterations")]
    MaxIterations(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

fn window_suffix(window: &Option<usize>) -> String {
    match window {
        Some(w) => alloc::format!(" on window {w}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach a window/block index to a conditioning failure.
    pub fn in_window(self, index: usize) -> Self {
        match self {
            Error::Conditioning { condition, .. } => Error::Conditioning {
                condition,
                window: Some(index),
            },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
