use std::path::PathBuf;
use thiserror::Error;

/// Binary array / checkpoint file format violations. Kept separate so
/// callers can distinguish corruption kinds.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated payload: needed {needed} bytes, only {available} available")]
    Truncated { needed: u64, available: u64 },

    #[error("unsupported dtype code {0}")]
    Dtype(u8),
}

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("bernstein index {index} out of range for degree {degree}")]
    BernsteinIndex { degree: usize, index: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("lattice shape mismatch: expected {expected_cols}x{expected_rows} control points, got {cols}x{rows}")]
    LatticeShape {
        expected_cols: usize,
        expected_rows: usize,
        cols: usize,
        rows: usize,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss at step {step} (loss_d={loss_d}, loss_g={loss_g})")]
    NonFiniteLoss { step: u64, loss_d: f64, loss_g: f64 },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("kernel matrix factorization failed after jitter escalation up to {max_jitter:e}")]
    Factorization { max_jitter: f64 },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("external evaluator failed: {0}")]
    ExternalCommand(String),

    #[error(transparent)]
    Autodiff(#[from] duq_autodiff::AutodiffError),

    #[error("configuration error: {0}")]
    Config(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for the infeasibility marker that optimizers treat as a signal
    /// rather than a failure.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CoreError::Infeasible(_))
    }
}
