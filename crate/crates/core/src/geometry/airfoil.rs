//! Airfoil designs: 192 chord-normalized surface points ordered trailing
//! edge -> upper surface -> leading edge -> lower surface -> trailing edge,
//! plus the FFD-based fabrication model and a synthetic nominal family.

use super::{BBox, ControlLattice, PerturbationConfig};
use crate::{CoreError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Number of surface points per airfoil.
pub const AIRFOIL_POINTS: usize = 192;

/// FFD lattice layout for airfoil fabrication: 8 columns along the chord,
/// 3 rows across the thickness.
pub const FFD_COLS: usize = 8;
pub const FFD_ROWS: usize = 3;

/// An airfoil as a fixed-length sequence of `(x, y)` surface points.
#[derive(Debug, Clone, PartialEq)]
pub struct AirfoilDesign {
    points: Vec<[f64; 2]>,
}

impl AirfoilDesign {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != AIRFOIL_POINTS {
            return Err(CoreError::Validation(format!(
                "airfoil needs exactly {AIRFOIL_POINTS} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(CoreError::Validation("non-finite airfoil coordinate".into()));
        }
        let design = Self { points };
        if design.bbox().width() <= 0.0 {
            return Err(CoreError::DegenerateGeometry(
                "airfoil bounding box has no width".into(),
            ));
        }
        Ok(design)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in &self.points {
            b.x_min = b.x_min.min(p[0]);
            b.x_max = b.x_max.max(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.y_max = b.y_max.max(p[1]);
        }
        b
    }

    /// Flattens to `[x0, y0, x1, y1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * AIRFOIL_POINTS {
            return Err(CoreError::Validation(format!(
                "flat airfoil needs {} values, got {}",
                2 * AIRFOIL_POINTS,
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Largest Euclidean gap between consecutive surface points.
    pub fn max_consecutive_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Parametric coordinates of each surface point within the design's bounding
/// box: `u = (x - x_min)/width`, `v = (y - y_min)/height`.
pub fn parametric_coords(design: &AirfoilDesign) -> Result<Vec<[f64; 2]>> {
    let bbox = design.bbox();
    if bbox.width() <= 0.0 || bbox.height() <= 0.0 {
        return Err(CoreError::DegenerateGeometry(format!(
            "bounding box degenerate (width={}, height={}); parametric coordinates undefined",
            bbox.width(),
            bbox.height()
        )));
    }
    Ok(design
        .points()
        .iter()
        .map(|p| {
            [
                (p[0] - bbox.x_min) / bbox.width(),
                (p[1] - bbox.y_min) / bbox.height(),
            ]
        })
        .collect())
}

/// Applies the control lattice to the design: each output point is
/// `sum_l sum_m B_l^7(u) B_m^2(v) P[l,m]` with `(u, v)` taken from the
/// nominal design. An unperturbed lattice reproduces the input exactly
/// (Bernstein linear precision).
pub fn ffd_deform(nominal: &AirfoilDesign, lattice: &ControlLattice) -> Result<AirfoilDesign> {
    if lattice.cols() != FFD_COLS || lattice.rows() != FFD_ROWS {
        return Err(CoreError::LatticeShape {
            expected_cols: FFD_COLS,
            expected_rows: FFD_ROWS,
            cols: lattice.cols(),
            rows: lattice.rows(),
        });
    }
    let uv = parametric_coords(nominal)?;
    let points = uv.iter().map(|&[u, v]| lattice.deform_point(u, v)).collect();
    AirfoilDesign::new(points)
}

/// Simulated fabrication: independent Gaussian noise with standard deviation
/// `cfg.noise_std` on the y-coordinates of all control points except those in
/// the leftmost and rightmost lattice columns, followed by [`ffd_deform`].
pub fn perturb_airfoil(
    design: &AirfoilDesign,
    cfg: &PerturbationConfig,
    rng: &mut impl Rng,
) -> Result<AirfoilDesign> {
    cfg.validate()?;
    let mut lattice = ControlLattice::regular(FFD_COLS, FFD_ROWS, design.bbox());
    for l in 1..FFD_COLS - 1 {
        for m in 0..FFD_ROWS {
            let eps: f64 = StandardNormal.sample(rng);
            lattice.point_mut(l, m)[1] += cfg.noise_std * eps;
        }
    }
    ffd_deform(design, &lattice)
}

/// Parameters of the built-in synthetic nominal family: a camber line with
/// adjustable position plus a polynomial thickness envelope, the classic
/// four-digit construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoilParams {
    /// Maximum camber as a fraction of chord.
    pub camber: f64,
    /// Chordwise position of maximum camber, in (0, 1).
    pub camber_pos: f64,
    /// Maximum thickness as a fraction of chord.
    pub thickness: f64,
}

fn thickness_profile(t: f64, x: f64) -> f64 {
    // Closed-trailing-edge polynomial envelope.
    5.0 * t
        * (0.2969 * x.sqrt() - 0.1260 * x - 0.3516 * x * x + 0.2843 * x.powi(3)
            - 0.1036 * x.powi(4))
}

fn camber_line(m: f64, p: f64, x: f64) -> f64 {
    if x < p {
        m / (p * p) * (2.0 * p * x - x * x)
    } else {
        m / ((1.0 - p) * (1.0 - p)) * ((1.0 - 2.0 * p) + 2.0 * p * x - x * x)
    }
}

/// Samples the synthetic family at 192 points with cosine chord spacing.
pub fn synth_airfoil(params: &FoilParams) -> AirfoilDesign {
    let half = AIRFOIL_POINTS / 2;
    let mut points = Vec::with_capacity(AIRFOIL_POINTS);
    // Upper surface: trailing edge to leading edge.
    for k in 0..half {
        let theta = std::f64::consts::PI * k as f64 / (half - 1) as f64;
        let x = 0.5 * (1.0 + theta.cos());
        let y = camber_line(params.camber, params.camber_pos, x)
            + thickness_profile(params.thickness, x);
        points.push([x, y]);
    }
    // Lower surface: leading edge back to trailing edge.
    for k in 0..half {
        let theta = std::f64::consts::PI * k as f64 / (half - 1) as f64;
        let x = 0.5 * (1.0 - theta.cos());
        let y = camber_line(params.camber, params.camber_pos, x)
            - thickness_profile(params.thickness, x);
        points.push([x, y]);
    }
    AirfoilDesign::new(points).expect("synthetic family is always valid")
}

/// Draws family parameters uniformly over the documented ranges:
/// camber in [0, 0.06], camber position in [0.25, 0.55], thickness in
/// [0.06, 0.16].
pub fn sample_foil_params(rng: &mut impl Rng) -> FoilParams {
    FoilParams {
        camber: rng.random_range(0.0..0.06),
        camber_pos: rng.random_range(0.25..0.55),
        thickness: rng.random_range(0.06..0.16),
    }
}

/// Loads a plain-text coordinate file (one `x y` pair per line, optional
/// name header) and resamples it to 192 points by arc length.
pub fn load_airfoil_dat(path: &Path) -> Result<AirfoilDesign> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut raw: Vec<[f64; 2]> = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            continue;
        };
        if let (Ok(x), Ok(y)) = (a.parse::<f64>(), b.parse::<f64>()) {
            // Header lines like "NACA 2412" parse as garbage coordinates;
            // coordinate files are chord-normalized so anything far outside
            // [-2, 3] is treated as part of the name.
            if (-2.0..=3.0).contains(&x) && (-2.0..=3.0).contains(&y) {
                raw.push([x, y]);
            }
        }
    }
    if raw.len() < 4 {
        return Err(CoreError::Validation(format!(
            "{}: too few coordinate pairs ({})",
            path.display(),
            raw.len()
        )));
    }
    AirfoilDesign::new(resample_polyline(&raw, AIRFOIL_POINTS))
}

/// Uniform arc-length resampling of a polyline.
fn resample_polyline(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0; points.len()];
    for i in 1..points.len() {
        let d = ((points[i][0] - points[i - 1][0]).powi(2)
            + (points[i][1] - points[i - 1][1]).powi(2))
        .sqrt();
        cum[i] = cum[i - 1] + d;
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 1 < points.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let span = (cum[seg + 1] - cum[seg]).max(1e-300);
        let t = ((target - cum[seg]) / span).clamp(0.0, 1.0);
        out.push([
            points[seg][0] + t * (points[seg + 1][0] - points[seg][0]),
            points[seg][1] + t * (points[seg + 1][1] - points[seg][1]),
        ]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn demo_foil() -> AirfoilDesign {
        synth_airfoil(&FoilParams {
            camber: 0.03,
            camber_pos: 0.4,
            thickness: 0.12,
        })
    }

    #[test]
    fn parametric_coords_hit_corners() {
        let foil = demo_foil();
        let bbox = foil.bbox();
        let uv = parametric_coords(&foil).unwrap();
        for (p, [u, v]) in foil.points().iter().zip(&uv) {
            assert!((0.0..=1.0).contains(u) && (0.0..=1.0).contains(v));
            if p[0] == bbox.x_min {
                assert_eq!(*u, 0.0);
            }
            if p[0] == bbox.x_max {
                assert_eq!(*u, 1.0);
            }
        }
    }

    #[test]
    fn parametric_coords_reject_flat_plate() {
        let flat: Vec<[f64; 2]> = (0..AIRFOIL_POINTS)
            .map(|k| [k as f64 / (AIRFOIL_POINTS - 1) as f64, 0.0])
            .collect();
        let design = AirfoilDesign::new(flat).unwrap();
        assert!(matches!(
            parametric_coords(&design),
            Err(CoreError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn ffd_identity_on_regular_lattice() {
        let foil = demo_foil();
        let lattice = ControlLattice::regular(FFD_COLS, FFD_ROWS, foil.bbox());
        let out = ffd_deform(&foil, &lattice).unwrap();
        for (a, b) in foil.points().iter().zip(out.points()) {
            assert!((a[0] - b[0]).abs() <= 1e-12, "{a:?} vs {b:?}");
            assert!((a[1] - b[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ffd_translation_equivariance() {
        let foil = demo_foil();
        let mut lattice = ControlLattice::regular(FFD_COLS, FFD_ROWS, foil.bbox());
        lattice.translate(0.0, 0.25);
        let out = ffd_deform(&foil, &lattice).unwrap();
        for (a, b) in foil.points().iter().zip(out.points()) {
            assert!((a[0] - b[0]).abs() <= 1e-12);
            assert!((a[1] + 0.25 - b[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ffd_single_point_matches_direct_sum() {
        use crate::geometry::bernstein;
        let foil = demo_foil();
        let mut lattice = ControlLattice::regular(FFD_COLS, FFD_ROWS, foil.bbox());
        lattice.point_mut(3, 1)[1] += 0.1;
        let out = ffd_deform(&foil, &lattice).unwrap();
        // Independent direct evaluation of the double sum.
        let uv = parametric_coords(&foil).unwrap();
        for (i, &[u, v]) in uv.iter().enumerate() {
            let mut expect = [0.0, 0.0];
            for l in 0..FFD_COLS {
                for m in 0..FFD_ROWS {
                    let w = bernstein(7, l, u).unwrap() * bernstein(2, m, v).unwrap();
                    let p = lattice.point(l, m);
                    expect[0] += w * p[0];
                    expect[1] += w * p[1];
                }
            }
            assert!((out.points()[i][0] - expect[0]).abs() < 1e-12);
            assert!((out.points()[i][1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn ffd_rejects_wrong_lattice_shape() {
        let foil = demo_foil();
        let lattice = ControlLattice::regular(4, 4, foil.bbox());
        assert!(matches!(
            ffd_deform(&foil, &lattice),
            Err(CoreError::LatticeShape { .. })
        ));
    }

    #[test]
    fn perturb_is_deterministic_and_converges_at_tiny_noise() {
        let foil = demo_foil();
        let cfg = PerturbationConfig {
            noise_std: 1e-12,
            filter_std: 0.0,
            seed: 5,
        };
        let a = perturb_airfoil(&foil, &cfg, &mut rng::seeded(5)).unwrap();
        let b = perturb_airfoil(&foil, &cfg, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        for (p, q) in foil.points().iter().zip(a.points()) {
            assert!((p[0] - q[0]).abs() < 1e-9);
            assert!((p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn perturb_keeps_end_columns_fixed() {
        // End columns of the lattice are untouched. Surface points at u=0 or
        // u=1 are influenced only by an end column (B_l^7 vanishes there for
        // interior l), so they must not move in either coordinate.
        let foil = demo_foil();
        let cfg = PerturbationConfig::airfoil_default(11);
        let fab = perturb_airfoil(&foil, &cfg, &mut rng::seeded(11)).unwrap();
        let bbox = foil.bbox();
        for (p, q) in foil.points().iter().zip(fab.points()) {
            if p[0] == bbox.x_min || p[0] == bbox.x_max {
                assert!((p[0] - q[0]).abs() < 1e-12);
                assert!((p[1] - q[1]).abs() < 1e-12, "end point moved: {p:?} -> {q:?}");
            }
        }
    }

    #[test]
    fn fabricated_airfoils_stay_continuous() {
        let foil = demo_foil();
        let nominal_gap = foil.max_consecutive_gap();
        let cfg = PerturbationConfig::airfoil_default(0);
        for seed in 0..20 {
            let fab = perturb_airfoil(&foil, &cfg, &mut rng::stream(0, 77, seed)).unwrap();
            assert!(
                fab.max_consecutive_gap() <= 3.0 * nominal_gap,
                "seed {seed}: gap {} vs nominal {}",
                fab.max_consecutive_gap(),
                nominal_gap
            );
        }
    }

    #[test]
    fn dat_loader_roundtrip() {
        let dir = std::env::temp_dir().join("duq_dat_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demo.dat");
        let foil = demo_foil();
        let mut text = String::from("DEMO FOIL\n");
        for p in foil.points() {
            text.push_str(&format!("{:.6} {:.6}\n", p[0], p[1]));
        }
        std::fs::write(&path, text).unwrap();
        let loaded = load_airfoil_dat(&path).unwrap();
        assert_eq!(loaded.points().len(), AIRFOIL_POINTS);
        let bbox = loaded.bbox();
        assert!(bbox.width() > 0.9 && bbox.width() < 1.1);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_dat_file_is_io_error_with_path() {
        let err = load_airfoil_dat(Path::new("/nonexistent/foo.dat")).unwrap_err();
        match err {
            CoreError::Io { path, .. } => assert!(path.to_string_lossy().contains("foo.dat")),
            other => panic!("expected Io error, got {other:?}"),
        }
    }
}
