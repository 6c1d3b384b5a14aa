//! Dense f64 tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The crate is deliberately small: enough primitives to express multilayer
//! perceptrons, im2col-backed convolutions and the usual GAN losses, a
//! recording tape ([`Graph`]) that replays itself backwards for gradients,
//! and a bias-corrected Adam optimizer. Everything is CPU-only, f64, and
//! deterministic: the same op sequence on the same inputs produces bitwise
//! identical results.
//!
//! Typical use builds a fresh [`Graph`] per forward pass, registers
//! parameters as leaves, computes a scalar loss, and calls
//! [`Graph::backward`], which consumes the tape and hands back the gradient
//! buffers.

mod adam;
mod error;
mod graph;
mod params;
mod tensor;

pub mod gradcheck;

pub use adam::AdamState;
pub use error::AutodiffError;
pub use graph::{ConvSpec, Gradients, Graph, Value};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;

/// Shorthand result type used throughout the crate.
pub type Result<T> = std::result::Result<T, AutodiffError>;
