//! Loss arithmetic, in two forms: plain f64 formulas (the contract surface,
//! unit-testable against analytic values) and graph builders used by the
//! training loop. Both clamp probabilities away from {0, 1} by 1e-7 before
//! taking logs.

use crate::Result;
use duq_autodiff::{Graph, Value};

/// Probability clamp margin applied before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Log-density of `code` under a diagonal Gaussian with the given mean and
/// unit variance.
pub fn gaussian_code_log_density(mean: &[f64], code: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), code.len());
    let sumsq: f64 = mean
        .iter()
        .zip(code)
        .map(|(m, c)| (c - m) * (c - m))
        .sum();
    -0.5 * sumsq - 0.5 * mean.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Discriminator outputs on a real batch.
#[derive(Debug, Clone)]
pub struct RealBatchStats {
    /// `D(real pair)` probabilities.
    pub d_real: Vec<f64>,
}

/// Discriminator outputs on a generated batch, with the auxiliary-head
/// log-likelihood of the codes that produced each pair.
#[derive(Debug, Clone)]
pub struct GeneratedBatchStats {
    /// `D(fake pair)` probabilities.
    pub d_fake: Vec<f64>,
    /// `log Q(parent, child | fake pair)` per sample.
    pub code_log_density: Vec<f64>,
}

/// The two training losses:
///
/// ```text
/// loss_d = -mean log D(real) - mean log(1 - D(fake))
/// loss_g = -mean log D(fake) - lambda * mean log Q(codes | fake)
/// ```
///
/// The generator term is the non-saturating form; the code entropy is a
/// constant under a fixed prior and is omitted.
pub fn hgan_loss(
    real: &RealBatchStats,
    generated: &GeneratedBatchStats,
    lambda_info: f64,
) -> (f64, f64) {
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let n = real.d_real.len() as f64;
    let m = generated.d_fake.len() as f64;
    let loss_d = -real.d_real.iter().map(|&p| clamp(p).ln()).sum::<f64>() / n
        - generated
            .d_fake
            .iter()
            .map(|&p| (1.0 - clamp(p)).ln())
            .sum::<f64>()
            / m;
    let info = generated.code_log_density.iter().sum::<f64>() / m;
    let loss_g =
        -generated.d_fake.iter().map(|&p| clamp(p).ln()).sum::<f64>() / m - lambda_info * info;
    (loss_d, loss_g)
}

/// `-mean log clamp(sigmoid(logit))` as a graph scalar.
pub(crate) fn graph_neg_mean_log_prob(g: &mut Graph, logit: Value) -> Result<Value> {
    let p = g.sigmoid(logit);
    let p = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.log(p);
    let m = g.mean(lp, None)?;
    Ok(g.scale(m, -1.0))
}

/// `-mean log clamp(1 - sigmoid(logit))` as a graph scalar.
pub(crate) fn graph_neg_mean_log_one_minus_prob(g: &mut Graph, logit: Value) -> Result<Value> {
    let p = g.sigmoid(logit);
    let neg = g.scale(p, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let c = g.clamp(one_minus, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.log(c);
    let m = g.mean(lp, None)?;
    Ok(g.scale(m, -1.0))
}

/// Mean over the batch of `log Q(codes | pair)` under unit-variance heads:
/// `-0.5 |code - mean|^2 - (d/2) log 2pi`, summed over parent and child.
pub(crate) fn graph_mean_code_log_density(
    g: &mut Graph,
    q_parent_mean: Value,
    q_child_mean: Value,
    parent_codes: Value,
    child_codes: Value,
) -> Result<Value> {
    let dims = (g.value(q_parent_mean).shape()[1] + g.value(q_child_mean).shape()[1]) as f64;
    let dp = g.sub(parent_codes, q_parent_mean)?;
    let dp2 = g.mul(dp, dp)?;
    let sp = g.sum(dp2, Some(1))?;
    let dc = g.sub(child_codes, q_child_mean)?;
    let dc2 = g.mul(dc, dc)?;
    let sc = g.sum(dc2, Some(1))?;
    let s = g.add(sp, sc)?;
    let scaled = g.scale(s, -0.5);
    let shifted = g.add_scalar(scaled, -0.5 * dims * (2.0 * std::f64::consts::PI).ln());
    Ok(g.mean(shifted, None)?)
}
