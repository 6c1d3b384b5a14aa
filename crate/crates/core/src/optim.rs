//! Box-constrained local minimization by projected gradient descent with
//! Armijo backtracking. Shared by the generator fitting test, GP
//! hyperparameter fits, and acquisition maximization - all smooth, bounded,
//! low-dimensional problems.

/// Options for [`minimize_box`].
#[derive(Debug, Clone, Copy)]
pub struct BoxOpts {
    pub max_iters: usize,
    pub init_step: f64,
    pub shrink: f64,
    pub grow: f64,
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for BoxOpts {
    fn default() -> Self {
        Self {
            max_iters: 60,
            init_step: 0.1,
            shrink: 0.5,
            grow: 1.5,
            armijo: 1e-4,
            min_step: 1e-12,
        }
    }
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`. `f` returns the
/// value and gradient at a point. Returns the best point *evaluated*, which
/// is never worse than the (projected) starting point: even candidates that
/// fail the sufficient-decrease test are remembered if they happened to
/// improve.
pub fn minimize_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BoxOpts,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut fx, mut grad) = f(&x);
    let mut best = (x.clone(), fx);
    let mut step = opts.init_step;

    for _ in 0..opts.max_iters {
        let mut cand = vec![0.0; x.len()];
        // Backtrack until sufficient decrease along the projected direction.
        let mut accepted = false;
        while step >= opts.min_step {
            for i in 0..x.len() {
                cand[i] = (x[i] - step * grad[i]).clamp(lo[i], hi[i]);
            }
            let travel: f64 = x
                .iter()
                .zip(&cand)
                .zip(&grad)
                .map(|((xi, ci), gi)| gi * (xi - ci))
                .sum();
            if travel <= 0.0 {
                // Projection produced no usable move in the descent direction.
                step *= opts.shrink;
                continue;
            }
            let (fc, gc) = f(&cand);
            if fc < best.1 {
                best = (cand.clone(), fc);
            }
            if fc <= fx - opts.armijo * travel {
                x.copy_from_slice(&cand);
                fx = fc;
                grad = gc;
                step = (step * opts.grow).min(opts.init_step * 100.0);
                accepted = true;
                break;
            }
            step *= opts.shrink;
        }
        if !accepted {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| {
            let v = (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.2).powi(2);
            (v, vec![2.0 * (x[0] - 0.3), 4.0 * (x[1] + 0.2)])
        };
        let (x, fx) = minimize_box(f, &[0.9, 0.9], &[0.0, 0.0], &[1.0, 1.0], &BoxOpts::default());
        assert!((x[0] - 0.3).abs() < 1e-4, "{x:?}");
        // The second coordinate's optimum lies outside the box; expect the bound.
        assert!(x[1].abs() < 1e-9, "{x:?}");
        assert!(fx <= 0.1);
    }

    #[test]
    fn never_worse_than_start() {
        // A nasty oscillating function: the minimizer may stall but must not
        // return something worse than the starting point.
        let f = |x: &[f64]| {
            let v = (8.0 * x[0]).sin() + x[0];
            (v, vec![8.0 * (8.0 * x[0]).cos() + 1.0])
        };
        let (_, fx) = minimize_box(f, &[0.5], &[0.0], &[1.0], &BoxOpts::default());
        let (f0, _) = f(&[0.5]);
        assert!(fx <= f0);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0], vec![1.0]);
        let (x, _) = minimize_box(f, &[0.7], &[0.25], &[1.0], &BoxOpts::default());
        assert!((x[0] - 0.25).abs() < 1e-12);
    }
}
