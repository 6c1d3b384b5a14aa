//! Design synthesis and simulated fabrication.
//!
//! Airfoils are closed sequences of 192 chord-normalized surface points;
//! metasurfaces are 64x64 level-set fields. Fabrication imperfection is
//! simulated by perturbing a free-form-deformation (FFD) control lattice:
//! Gaussian noise on interior control-point heights for airfoils, and a
//! full-grid warp plus Gaussian smoothing for metasurfaces.

mod airfoil;
mod metasurface;

pub use airfoil::{
    ffd_deform, load_airfoil_dat, parametric_coords, perturb_airfoil, sample_foil_params,
    synth_airfoil, AirfoilDesign, FoilParams, AIRFOIL_POINTS,
};
pub use metasurface::{
    gaussian_filter, motif_fields, perturb_metasurface, sample_motif_weights,
    synth_metasurface_nominal, warp_by_lattice, LevelSetField, FIELD_SIZE, MOTIF_COUNT,
};

use crate::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Binomial coefficient for the small degrees used here (n <= 20).
fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Bernstein basis polynomial `B_i^n(u) = C(n,i) u^i (1-u)^(n-i)`.
pub fn bernstein(degree: usize, index: usize, u: f64) -> Result<f64> {
    if index > degree {
        return Err(CoreError::BernsteinIndex { degree, index });
    }
    Ok(binomial(degree, index) * u.powi(index as i32) * (1.0 - u).powi((degree - index) as i32))
}

/// A rectangular grid of FFD control points. Column index `l` runs along x
/// (`0..cols`), row index `m` along y (`0..rows`). Point storage is
/// column-major: `points[l * rows + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLattice {
    cols: usize,
    rows: usize,
    points: Vec<[f64; 2]>,
    bbox: BBox,
}

impl ControlLattice {
    /// The unperturbed lattice: control point `(l, m)` sits at
    /// `(x_min + l/(cols-1) * width, y_min + m/(rows-1) * height)`.
    pub fn regular(cols: usize, rows: usize, bbox: BBox) -> Self {
        assert!(cols >= 2 && rows >= 2, "lattice needs at least 2x2 points");
        let mut points = Vec::with_capacity(cols * rows);
        for l in 0..cols {
            for m in 0..rows {
                points.push([
                    bbox.x_min + (l as f64 / (cols - 1) as f64) * bbox.width(),
                    bbox.y_min + (m as f64 / (rows - 1) as f64) * bbox.height(),
                ]);
            }
        }
        Self {
            cols,
            rows,
            points,
            bbox,
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn point(&self, l: usize, m: usize) -> [f64; 2] {
        self.points[l * self.rows + m]
    }

    pub fn point_mut(&mut self, l: usize, m: usize) -> &mut [f64; 2] {
        &mut self.points[l * self.rows + m]
    }

    pub fn translate(&mut self, dx: f64, dy: f64) {
        for p in &mut self.points {
            p[0] += dx;
            p[1] += dy;
        }
    }

    /// Evaluates the FFD map at parametric coordinates `(u, v)` in `[0,1]^2`.
    pub fn deform_point(&self, u: f64, v: f64) -> [f64; 2] {
        let (nl, nm) = (self.cols - 1, self.rows - 1);
        let bu: Vec<f64> = (0..self.cols)
            .map(|l| bernstein(nl, l, u).expect("index in range"))
            .collect();
        let bv: Vec<f64> = (0..self.rows)
            .map(|m| bernstein(nm, m, v).expect("index in range"))
            .collect();
        let mut out = [0.0, 0.0];
        for (l, wu) in bu.iter().enumerate() {
            for (m, wv) in bv.iter().enumerate() {
                let w = wu * wv;
                let p = self.point(l, m);
                out[0] += w * p[0];
                out[1] += w * p[1];
            }
        }
        out
    }
}

/// Noise model for simulated fabrication.
///
/// `noise_std` is the control-point displacement standard deviation: chord
/// units for airfoils (default 0.02), pixels for metasurfaces (default 1).
/// `filter_std` is the smoothing Gaussian's standard deviation in pixels
/// (metasurface only, default 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub noise_std: f64,
    pub filter_std: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn airfoil_default(seed: u64) -> Self {
        Self {
            noise_std: 0.02,
            filter_std: 0.0,
            seed,
        }
    }

    pub fn metasurface_default(seed: u64) -> Self {
        Self {
            noise_std: 1.0,
            filter_std: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.noise_std.is_finite() || self.noise_std <= 0.0 {
            return Err(CoreError::Validation(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if self.filter_std < 0.0 {
            return Err(CoreError::Validation(format!(
                "filter_std must be nonnegative, got {}",
                self.filter_std
            )));
        }
        Ok(())
    }
}
