//! Generative design under fabrication uncertainty.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. **Data** - [`geometry`] synthesizes nominal designs (airfoils as 192
//!    surface points, metasurfaces as 64x64 level-set fields) and simulates
//!    fabrication by free-form-deformation perturbation; [`dataset`] builds,
//!    normalizes, and persists paired nominal/fabricated datasets.
//! 2. **Model** - [`hgan`] trains a hierarchical GAN whose generator maps a
//!    parent code (nominal geometry), a child code (fabrication variability),
//!    and noise to a design; zeroing the child code yields the nominal
//!    branch. [`uq`] samples the learned conditional fabrication
//!    distribution, estimates quantiles, runs fitting tests, and compares
//!    distributions by 1-D Wasserstein distance.
//! 3. **Optimization** - [`objectives`] provides fast analytic performance
//!    proxies, and [`optimizer`] runs Bayesian optimization (Latin hypercube
//!    init, Gaussian-process surrogate, expected improvement) over the parent
//!    latent space in nominal or risk-adjusted modes. [`studies`] wires the
//!    stages into reproducible end-to-end recipes, and [`report`] renders
//!    SVG plots and CSV traces.
//!
//! Everything is seeded and deterministic: a run is reproducible bit-for-bit
//! from its resolved configuration.

pub mod dataset;
pub mod geometry;
pub mod hgan;
pub mod objectives;
pub mod optim;
pub mod optimizer;
pub mod report;
pub mod rng;
pub mod studies;
pub mod uq;

mod error;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
