use thiserror::Error;

/// Errors raised by tensor construction, graph ops, and the optimizer.
#[derive(Debug, Clone, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in `{op}`: left operand has shape {lhs:?}, right operand has shape {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} implies {expected} elements but {actual} were provided")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("`{op}` expects a rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("axis {axis} out of range for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("no gradient available for parameter `{name}`")]
    MissingGradient { name: String },

    #[error("reshape from {from:?} ({from_len} elements) to {to:?} ({to_len} elements)")]
    BadReshape {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },

    #[error("invalid hyperparameter: {0}")]
    BadHyper(String),
}
