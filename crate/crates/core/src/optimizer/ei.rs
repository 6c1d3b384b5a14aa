//! Expected improvement for maximization.

use std::f64::consts::PI;

pub(crate) fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn normal_cdf(u: f64) -> f64 {
    0.5 * (1.0 + libm::erf(u / std::f64::consts::SQRT_2))
}

/// `EI = (mean - best) Phi(u) + std phi(u)` with `u = (mean - best)/std`;
/// at `std = 0` it degenerates to `max(mean - best, 0)`. Nonnegative
/// everywhere.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if std <= 0.0 {
        return (mean - best).max(0.0);
    }
    let u = (mean - best) / std;
    ((mean - best) * normal_cdf(u) + std * normal_pdf(u)).max(0.0)
}

/// Partial derivatives of EI with respect to (mean, std). Both collapse to
/// the textbook identities `dEI/dmean = Phi(u)` and `dEI/dstd = phi(u)`.
pub(crate) fn expected_improvement_grad(mean: f64, std: f64, best: f64) -> (f64, f64) {
    if std <= 0.0 {
        return (if mean > best { 1.0 } else { 0.0 }, 0.0);
    }
    let u = (mean - best) / std;
    (normal_cdf(u), normal_pdf(u))
}
