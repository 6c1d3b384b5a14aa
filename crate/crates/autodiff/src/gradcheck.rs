//! Central finite-difference gradient checking.
//!
//! This module is the independent oracle used by the test suites: it never
//! touches the tape, only re-evaluates a black-box loss closure at shifted
//! parameter values.

/// Central finite differences of `f` at `x` with the given step.
pub fn finite_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = f(&probe);
        probe[i] = orig - step;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Result of comparing an analytic gradient against a numeric one.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs: f64,
    pub worst_index: usize,
}

impl GradCheck {
    /// Passes when every component above the absolute floor (applied during
    /// [`compare`]) is within `rel_tol` relative error.
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel < rel_tol
    }
}

/// Elementwise comparison: relative error is `|a - n| / max(|a|, |n|)`,
/// with differences below `abs_floor` ignored.
pub fn compare(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = GradCheck {
        max_rel: 0.0,
        max_abs: 0.0,
        worst_index: 0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        if abs <= abs_floor {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        if rel > worst.max_rel {
            worst.max_rel = rel;
            worst.max_abs = abs;
            worst.worst_index = i;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = finite_difference(f, &[1.0, -3.0], 1e-6);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] + 6.0).abs() < 1e-8);
    }

    #[test]
    fn compare_flags_worst_component() {
        let check = compare(&[1.0, 2.0], &[1.0, 2.5], 1e-8);
        assert_eq!(check.worst_index, 1);
        assert!(!check.passes(1e-5));
        assert!(compare(&[1.0, 2.0], &[1.0 + 1e-9, 2.0], 1e-8).passes(1e-5));
    }
}
