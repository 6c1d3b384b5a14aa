//! Property tests for the metric and geometry invariants.

use duq_core::geometry::{ffd_deform, synth_airfoil, ControlLattice, FoilParams};
use duq_core::uq::{estimate_quantile, wasserstein1};
use proptest::prelude::*;

mod transport_oracle;
use transport_oracle::transport_lp;

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_matches_transport_lp(a in values(8), b in values(8)) {
        let fast = wasserstein1(&a, &b).unwrap();
        let lp = transport_lp(&a, &b);
        prop_assert!((fast - lp).abs() <= 1e-9, "{fast} vs {lp}");
    }

    #[test]
    fn wasserstein_metric_axioms(a in values(12), b in values(12), c in values(12)) {
        let dab = wasserstein1(&a, &b).unwrap();
        let dba = wasserstein1(&b, &a).unwrap();
        let dac = wasserstein1(&a, &c).unwrap();
        let dcb = wasserstein1(&c, &b).unwrap();
        prop_assert!(dab >= 0.0);
        prop_assert!((dab - dba).abs() < 1e-12);
        // Identity of indiscernibles on identical multisets.
        prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        // Triangle inequality.
        prop_assert!(dab <= dac + dcb + 1e-9, "{dab} > {dac} + {dcb}");
    }

    #[test]
    fn quantile_is_monotone_and_affine_equivariant(
        mut v in values(40),
        tau1 in 0.01..0.99f64,
        tau2 in 0.01..0.99f64,
        scale in 0.1..10.0f64,
        shift in -100.0..100.0f64,
    ) {
        let (lo, hi) = if tau1 <= tau2 { (tau1, tau2) } else { (tau2, tau1) };
        let qlo = estimate_quantile(&v, lo).unwrap().value;
        let qhi = estimate_quantile(&v, hi).unwrap().value;
        prop_assert!(qlo <= qhi);

        // Monotone increasing affine maps commute with the estimator.
        let mapped: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
        let qm = estimate_quantile(&mapped, lo).unwrap().value;
        prop_assert!((qm - (scale * qlo + shift)).abs() < 1e-9);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(estimate_quantile(&v, lo).unwrap().value, qlo);
    }

    #[test]
    fn ffd_affine_equivariance(
        camber in 0.0..0.06f64,
        camber_pos in 0.25..0.55f64,
        thickness in 0.06..0.16f64,
        dx in -0.5..0.5f64,
        dy in -0.5..0.5f64,
    ) {
        let foil = synth_airfoil(&FoilParams { camber, camber_pos, thickness });
        let mut lattice = ControlLattice::regular(8, 3, foil.bbox());
        lattice.translate(dx, dy);
        let out = ffd_deform(&foil, &lattice).unwrap();
        for (p, q) in foil.points().iter().zip(out.points()) {
            prop_assert!((p[0] + dx - q[0]).abs() <= 1e-12);
            prop_assert!((p[1] + dy - q[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalization_roundtrip(
        raw in prop::collection::vec(-3.0..3.0f64, 64),
        lo in -2.0..0.0f64,
        span in 0.5..4.0f64,
    ) {
        let norm = duq_core::dataset::Normalization { channels: vec![(lo, lo + span)] };
        let kind = duq_core::dataset::DesignKind::Metasurface;
        let mut padded = raw.clone();
        padded.resize(64 * 64, 0.0);
        let n = norm.normalize(kind, &padded);
        let back = norm.denormalize(kind, &n);
        for (a, b) in padded.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
