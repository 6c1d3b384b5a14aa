//! Metasurface unit cells as 64x64 level-set fields.
//!
//! Nominal designs are convex combinations of three canonical motif fields
//! (I-beam, cross, square ring) rendered as signed-distance-like level sets;
//! thresholding a field at zero recovers the solid region. Fabrication is
//! simulated by warping the pixel grid through a perturbed 12x12 FFD lattice
//! and smoothing with a Gaussian filter.

use super::{BBox, ControlLattice, PerturbationConfig};
use crate::{CoreError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Side length of the level-set grid.
pub const FIELD_SIZE: usize = 64;

/// Number of canonical motifs.
pub const MOTIF_COUNT: usize = 3;

/// FFD lattice resolution used for fabrication warping.
pub const WARP_POINTS: usize = 12;

/// A square level-set field; the design's solid region is where
/// `value >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    values: Vec<f64>,
    threshold: f64,
}

impl LevelSetField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_threshold(values, 0.0)
    }

    pub fn with_threshold(values: Vec<f64>, threshold: f64) -> Result<Self> {
        if values.len() != FIELD_SIZE * FIELD_SIZE {
            return Err(CoreError::Validation(format!(
                "level-set field needs {}x{} values, got {}",
                FIELD_SIZE,
                FIELD_SIZE,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Validation("non-finite level-set value".into()));
        }
        Ok(Self { values, threshold })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * FIELD_SIZE + col]
    }

    /// Thresholded binary image, row-major, `true` = solid.
    pub fn binarize(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v >= self.threshold).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        Self::new(flat.to_vec())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

// -- motifs -------------------------------------------------------------------

/// Canonical motif masks on the 64x64 grid. Dimensions are fixed so datasets
/// are reproducible; each returns `true` for solid pixels.
fn motif_mask(kind: usize, row: usize, col: usize) -> bool {
    let within = |v: usize, lo: usize, hi: usize| v >= lo && v < hi;
    match kind {
        // I-beam: two flanges joined by a web.
        0 => {
            (within(row, 12, 20) && within(col, 14, 50))
                || (within(row, 44, 52) && within(col, 14, 50))
                || (within(row, 20, 44) && within(col, 28, 36))
        }
        // Cross: horizontal and vertical bars.
        1 => {
            (within(row, 28, 36) && within(col, 10, 54))
                || (within(col, 28, 36) && within(row, 10, 54))
        }
        // Square ring: outer square minus inner hole.
        2 => {
            within(row, 12, 52)
                && within(col, 12, 52)
                && !(within(row, 20, 44) && within(col, 20, 44))
        }
        _ => unreachable!("motif kind out of range"),
    }
}

/// Signed-distance-like field for a binary mask: positive inside, negative
/// outside, magnitude = Euclidean pixel distance to the nearest opposite
/// pixel minus half a pixel (so the zero crossing sits on the boundary).
fn mask_to_level_set(mask: &[bool]) -> Vec<f64> {
    let n = FIELD_SIZE;
    // Collect boundary pixels (solid with an empty 4-neighbor and vice versa).
    let mut values = vec![0.0; n * n];
    // Brute-force nearest-opposite distance. 64x64 is small enough that the
    // quadratic scan (run once per motif, cached) is fine.
    let solid_pixels: Vec<(usize, usize)> = (0..n * n)
        .filter(|&i| mask[i])
        .map(|i| (i / n, i % n))
        .collect();
    let empty_pixels: Vec<(usize, usize)> = (0..n * n)
        .filter(|&i| !mask[i])
        .map(|i| (i / n, i % n))
        .collect();
    for r in 0..n {
        for c in 0..n {
            let inside = mask[r * n + c];
            let others = if inside { &empty_pixels } else { &solid_pixels };
            let mut best = f64::INFINITY;
            for &(orow, ocol) in others {
                let d2 =
                    (r as f64 - orow as f64).powi(2) + (c as f64 - ocol as f64).powi(2);
                if d2 < best {
                    best = d2;
                }
            }
            let d = best.sqrt() - 0.5;
            values[r * n + c] = if inside { d } else { -d };
        }
    }
    values
}

/// The three canonical motif fields, in order: I-beam, cross, square ring.
/// Computed once and cached.
pub fn motif_fields() -> &'static [LevelSetField; MOTIF_COUNT] {
    use std::sync::OnceLock;
    static MOTIFS: OnceLock<[LevelSetField; MOTIF_COUNT]> = OnceLock::new();
    MOTIFS.get_or_init(|| {
        let build = |kind: usize| {
            let mask: Vec<bool> = (0..FIELD_SIZE * FIELD_SIZE)
                .map(|i| motif_mask(kind, i / FIELD_SIZE, i % FIELD_SIZE))
                .collect();
            LevelSetField::new(mask_to_level_set(&mask)).expect("motif field is valid")
        };
        [build(0), build(1), build(2)]
    })
}

/// Nominal design: the convex combination `sum_k w_k * motif_k`.
pub fn synth_metasurface_nominal(weights: &[f64; MOTIF_COUNT]) -> Result<LevelSetField> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::Validation(format!(
            "motif weights must be a convex combination, got {weights:?} (sum {sum})"
        )));
    }
    let motifs = motif_fields();
    let mut values = vec![0.0; FIELD_SIZE * FIELD_SIZE];
    for (k, motif) in motifs.iter().enumerate() {
        for (dst, &src) in values.iter_mut().zip(motif.values()) {
            *dst += weights[k] * src;
        }
    }
    LevelSetField::new(values)
}

/// Uniform sample from the simplex (normalized exponentials).
pub fn sample_motif_weights(rng: &mut impl Rng) -> [f64; MOTIF_COUNT] {
    let mut w = [0.0; MOTIF_COUNT];
    let mut total = 0.0;
    for v in &mut w {
        let u: f64 = rng.random::<f64>().max(1e-12);
        *v = -u.ln();
        total += *v;
    }
    for v in &mut w {
        *v /= total;
    }
    w
}

// -- fabrication ---------------------------------------------------------------

/// Bilinear sample of a field at fractional pixel coordinates with clamped
/// edges. `(x, y)` are (column, row).
fn bilinear_sample(values: &[f64], x: f64, y: f64) -> f64 {
    let n = FIELD_SIZE;
    let cx = x.clamp(0.0, (n - 1) as f64);
    let cy = y.clamp(0.0, (n - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(n - 1);
    let y1 = (y0 + 1).min(n - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let v00 = values[y0 * n + x0];
    let v01 = values[y0 * n + x1];
    let v10 = values[y1 * n + x0];
    let v11 = values[y1 * n + x1];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Warps the pixel grid through an FFD lattice defined over the image
/// bounding box and resamples the field on the regular grid.
///
/// The lattice displaces grid coordinates; the new value at a regular grid
/// point is pulled bilinearly from the inverse-displaced source location,
/// which matches the forward warp to first order for the small smooth
/// displacements used here. An unperturbed lattice is the identity.
pub fn warp_by_lattice(field: &LevelSetField, lattice: &ControlLattice) -> Result<LevelSetField> {
    let n = FIELD_SIZE;
    let span = (n - 1) as f64;
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        let v = row as f64 / span;
        for col in 0..n {
            let u = col as f64 / span;
            let warped = lattice.deform_point(u, v);
            let dx = warped[0] - col as f64;
            let dy = warped[1] - row as f64;
            out[row * n + col] = bilinear_sample(field.values(), col as f64 - dx, row as f64 - dy);
        }
    }
    LevelSetField::with_threshold(out, field.threshold())
}

/// Separable Gaussian filter with half-sample reflective boundaries and
/// kernel radius `ceil(3 * std)`. A zero std is the identity. Reflection
/// remaps every out-of-range tap onto exactly one in-range cell, so the
/// field mean is preserved.
pub fn gaussian_filter(field: &LevelSetField, std: f64) -> Result<LevelSetField> {
    if std < 0.0 {
        return Err(CoreError::Validation(format!(
            "filter std must be nonnegative, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(field.clone());
    }
    let radius = (3.0 * std).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / std).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let n = FIELD_SIZE as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i as usize
    };

    let src = field.values();
    let mut rows_done = vec![0.0; (n * n) as usize];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let cc = reflect(c + ki as isize - radius);
                acc += w * src[(r * n) as usize + cc];
            }
            rows_done[(r * n + c) as usize] = acc;
        }
    }
    let mut out = vec![0.0; (n * n) as usize];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let rr = reflect(r + ki as isize - radius);
                acc += w * rows_done[rr * n as usize + c as usize];
            }
            out[(r * n + c) as usize] = acc;
        }
    }
    LevelSetField::with_threshold(out, field.threshold())
}

/// Simulated fabrication: perturbs all 12x12 control points in both axes
/// with std `cfg.noise_std` pixels, warps, then smooths with a Gaussian of
/// std `cfg.filter_std` pixels.
pub fn perturb_metasurface(
    field: &LevelSetField,
    cfg: &PerturbationConfig,
    rng: &mut impl Rng,
) -> Result<LevelSetField> {
    cfg.validate()?;
    let bbox = BBox {
        x_min: 0.0,
        x_max: (FIELD_SIZE - 1) as f64,
        y_min: 0.0,
        y_max: (FIELD_SIZE - 1) as f64,
    };
    let mut lattice = ControlLattice::regular(WARP_POINTS, WARP_POINTS, bbox);
    for l in 0..WARP_POINTS {
        for m in 0..WARP_POINTS {
            let ex: f64 = StandardNormal.sample(rng);
            let ey: f64 = StandardNormal.sample(rng);
            let p = lattice.point_mut(l, m);
            p[0] += cfg.noise_std * ex;
            p[1] += cfg.noise_std * ey;
        }
    }
    let warped = warp_by_lattice(field, &lattice)?;
    gaussian_filter(&warped, cfg.filter_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn motif_vertex_of_simplex() {
        let field = synth_metasurface_nominal(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(field.values(), motif_fields()[0].values());
    }

    #[test]
    fn motif_mixture_is_linear() {
        let field = synth_metasurface_nominal(&[0.5, 0.5, 0.0]).unwrap();
        let m = motif_fields();
        for i in 0..FIELD_SIZE * FIELD_SIZE {
            let expect = 0.5 * m[0].values()[i] + 0.5 * m[1].values()[i];
            assert!((field.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn thresholded_output_is_binary_image() {
        let field = synth_metasurface_nominal(&[0.3, 0.3, 0.4]).unwrap();
        let bin = field.binarize();
        assert_eq!(bin.len(), FIELD_SIZE * FIELD_SIZE);
        assert!(bin.iter().any(|&b| b) && bin.iter().any(|&b| !b));
    }

    #[test]
    fn rejects_non_convex_weights() {
        assert!(synth_metasurface_nominal(&[0.5, 0.6, 0.0]).is_err());
        assert!(synth_metasurface_nominal(&[-0.1, 0.6, 0.5]).is_err());
    }

    #[test]
    fn sampled_weights_are_convex() {
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            let w = sample_motif_weights(&mut r);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_warp_and_zero_filter_change_nothing() {
        let field = synth_metasurface_nominal(&[0.2, 0.5, 0.3]).unwrap();
        let bbox = BBox {
            x_min: 0.0,
            x_max: 63.0,
            y_min: 0.0,
            y_max: 63.0,
        };
        let lattice = ControlLattice::regular(WARP_POINTS, WARP_POINTS, bbox);
        let warped = warp_by_lattice(&field, &lattice).unwrap();
        for (a, b) in field.values().iter().zip(warped.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        // Zero filter std is the exact identity.
        let filtered = gaussian_filter(&warped, 0.0).unwrap();
        assert_eq!(filtered.values(), warped.values());
    }

    #[test]
    fn constant_field_stays_constant() {
        let field = LevelSetField::new(vec![1.75; FIELD_SIZE * FIELD_SIZE]).unwrap();
        let cfg = PerturbationConfig::metasurface_default(9);
        let fab = perturb_metasurface(&field, &cfg, &mut rng::seeded(9)).unwrap();
        for &v in fab.values() {
            assert!((v - 1.75).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_response_is_gaussian_kernel() {
        // Direct 2-D kernel-convolution oracle on a centered impulse.
        let mut values = vec![0.0; FIELD_SIZE * FIELD_SIZE];
        values[32 * FIELD_SIZE + 32] = 1.0;
        let field = LevelSetField::new(values).unwrap();
        let out = gaussian_filter(&field, 2.0).unwrap();

        let radius = 6i64;
        let mut k1 = Vec::new();
        for k in -radius..=radius {
            k1.push((-0.5 * (k as f64 / 2.0).powi(2)).exp());
        }
        let norm: f64 = k1.iter().sum();
        for (r, c, v) in (0..FIELD_SIZE)
            .flat_map(|r| (0..FIELD_SIZE).map(move |c| (r, c)))
            .map(|(r, c)| (r as i64, c as i64, out.at(r, c)))
        {
            let dr = r - 32;
            let dc = c - 32;
            let expect = if dr.abs() <= radius && dc.abs() <= radius {
                (k1[(dr + radius) as usize] / norm) * (k1[(dc + radius) as usize] / norm)
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-12, "at ({r},{c}): {v} vs {expect}");
        }
    }

    #[test]
    fn filter_preserves_mean() {
        let field = synth_metasurface_nominal(&[0.6, 0.1, 0.3]).unwrap();
        let filtered = gaussian_filter(&field, 2.0).unwrap();
        assert!((field.mean() - filtered.mean()).abs() < 1e-9);
    }

    #[test]
    fn perturbation_is_seed_deterministic() {
        let field = synth_metasurface_nominal(&[0.4, 0.4, 0.2]).unwrap();
        let cfg = PerturbationConfig::metasurface_default(21);
        let a = perturb_metasurface(&field, &cfg, &mut rng::seeded(21)).unwrap();
        let b = perturb_metasurface(&field, &cfg, &mut rng::seeded(21)).unwrap();
        assert_eq!(a, b);
    }
}
