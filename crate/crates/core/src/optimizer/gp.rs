//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Targets are standardized internally (so adding a constant to all
//! observations changes nothing downstream), hyperparameters live in log
//! space and are fit by multi-start projected gradient ascent on the log
//! marginal likelihood with analytic gradients, and the kernel matrix gets
//! jitter escalation if Cholesky factorization fails.

use crate::optim::{minimize_box, BoxOpts};
use crate::optimizer::lhs;
use crate::{rng, CoreError, Result};
use serde::{Deserialize, Serialize};

/// Kernel hyperparameters in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_signal_var: f64,
    pub log_lengths: Vec<f64>,
    pub log_noise_var: f64,
}

impl GpHyper {
    pub fn default_for_dim(d: usize) -> Self {
        Self {
            log_signal_var: 0.0,
            log_lengths: vec![(0.3f64).ln(); d],
            log_noise_var: (1e-4f64).ln(),
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_signal_var];
        v.extend_from_slice(&self.log_lengths);
        v.push(self.log_noise_var);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        Self {
            log_signal_var: v[0],
            log_lengths: v[1..v.len() - 1].to_vec(),
            log_noise_var: v[v.len() - 1],
        }
    }
}

/// Hyperparameter bounds, as (lower, upper) in the original scale; fits
/// work on their logs.
const SV_BOUNDS: (f64, f64) = (1e-4, 1e2);
const LEN_BOUNDS: (f64, f64) = (0.05, 10.0);
const NV_BOUNDS: (f64, f64) = (1e-10, 1.0);

/// Fitting options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitOpts {
    /// Extra Latin-hypercube starting points beyond the warm start.
    pub n_starts: usize,
    pub iters: usize,
    /// Warm start (e.g. the previous iteration's fit).
    pub warm: Option<GpHyper>,
    /// Skip optimization and use `warm` as-is.
    pub fixed: bool,
    pub seed: u64,
}

impl Default for GpFitOpts {
    fn default() -> Self {
        Self {
            n_starts: 4,
            iters: 40,
            warm: None,
            fixed: false,
            seed: 0,
        }
    }
}

/// A fitted surrogate.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyper,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

fn cholesky(a: &mut [f64], n: usize) -> std::result::Result<(), ()> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(());
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    // Solves L^T x = b given lower-triangular L.
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[k * n + i] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    x
}

/// Kernel without the noise term.
fn kernel_base(hyper: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    let sv = hyper.log_signal_var.exp();
    let mut s = 0.0;
    for (d, (&xa, &xb)) in a.iter().zip(b).enumerate() {
        let l = hyper.log_lengths[d].exp();
        let diff = (xa - xb) / l;
        s += diff * diff;
    }
    sv * (-0.5 * s).exp()
}

struct Factorized {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    lml: f64,
}

/// Builds and factorizes the kernel matrix for standardized targets,
/// escalating jitter on failure.
fn factorize(x: &[Vec<f64>], y_std: &[f64], hyper: &GpHyper) -> Result<Factorized> {
    let n = x.len();
    let nv = hyper.log_noise_var.exp();
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel_base(hyper, &x[i], &x[j]);
            base[i * n + j] = k;
            base[j * n + i] = k;
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut k = base.clone();
        for i in 0..n {
            k[i * n + i] += nv + jitter;
        }
        if cholesky(&mut k, n).is_ok() {
            let z = solve_lower(&k, n, y_std);
            let alpha = solve_upper_t(&k, n, &z);
            let mut log_det_half = 0.0;
            for i in 0..n {
                log_det_half += k[i * n + i].ln();
            }
            let fit: f64 = y_std.iter().zip(&alpha).map(|(y, a)| y * a).sum();
            let lml = -0.5 * fit
                - log_det_half
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(Factorized {
                chol: k,
                alpha,
                jitter,
                lml,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-2 {
            return Err(CoreError::Factorization { max_jitter: 1e-2 });
        }
    }
}

/// Log marginal likelihood and its gradient in the packed log-hyper vector.
fn lml_and_grad(x: &[Vec<f64>], y_std: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let hyper = GpHyper::from_vec(theta);
    let n = x.len();
    let d = hyper.log_lengths.len();
    let fac = match factorize(x, y_std, &hyper) {
        Ok(f) => f,
        // A hopeless hyperparameter corner: return a very bad value and a
        // zero gradient so the line search backs off.
        Err(_) => return (f64::NEG_INFINITY, vec![0.0; theta.len()]),
    };

    // K^-1 via the factorization (n columns of triangular solves).
    let mut k_inv = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let z = solve_lower(&fac.chol, n, &e);
        let col = solve_upper_t(&fac.chol, n, &z);
        for r in 0..n {
            k_inv[r * n + c] = col[r];
        }
    }

    // M = alpha alpha^T - K^-1; dLML/dtheta_j = 0.5 tr(M dK/dtheta_j).
    let mut grad = vec![0.0; theta.len()];
    let nv = hyper.log_noise_var.exp();
    for i in 0..n {
        for j in 0..n {
            let m = fac.alpha[i] * fac.alpha[j] - k_inv[i * n + j];
            let kb = kernel_base(&hyper, &x[i], &x[j]);
            // d/d log sv
            grad[0] += 0.5 * m * kb;
            // d/d log l_d
            for dd in 0..d {
                let l = hyper.log_lengths[dd].exp();
                let diff = (x[i][dd] - x[j][dd]) / l;
                grad[1 + dd] += 0.5 * m * kb * diff * diff;
            }
            // d/d log nv
            if i == j {
                grad[1 + d] += 0.5 * m * nv;
            }
        }
    }
    (fac.lml, grad)
}

impl GpSurrogate {
    /// Fits hyperparameters (unless `opts.fixed`) and factorizes.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, opts: &GpFitOpts) -> Result<Self> {
        if x.is_empty() {
            return Err(CoreError::EmptyInput("gp_fit"));
        }
        let d = x[0].len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
        let y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let y_std: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let warm = opts
            .warm
            .clone()
            .unwrap_or_else(|| GpHyper::default_for_dim(d));
        let hyper = if opts.fixed {
            warm
        } else {
            let mut lo = vec![SV_BOUNDS.0.ln()];
            lo.extend(vec![LEN_BOUNDS.0.ln(); d]);
            lo.push(NV_BOUNDS.0.ln());
            let mut hi = vec![SV_BOUNDS.1.ln()];
            hi.extend(vec![LEN_BOUNDS.1.ln(); d]);
            hi.push(NV_BOUNDS.1.ln());

            let mut starts = vec![warm.to_vec()];
            let mut start_rng = rng::stream(opts.seed, rng::tag::GP, 1);
            for unit in lhs(opts.n_starts.max(1), d + 2, &mut start_rng) {
                let mapped: Vec<f64> = unit
                    .iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(u, (l, h))| l + u * (h - l))
                    .collect();
                starts.push(mapped);
            }

            let box_opts = BoxOpts {
                max_iters: opts.iters,
                init_step: 0.25,
                ..BoxOpts::default()
            };
            let mut best: Option<(Vec<f64>, f64)> = None;
            for s in &starts {
                let (theta, neg) = minimize_box(
                    |t| {
                        let (lml, g) = lml_and_grad(&x, &y_std, t);
                        (-lml, g.iter().map(|v| -v).collect())
                    },
                    s,
                    &lo,
                    &hi,
                    &box_opts,
                );
                if best.as_ref().map(|(_, b)| neg < *b).unwrap_or(true) {
                    best = Some((theta, neg));
                }
            }
            GpHyper::from_vec(&best.expect("at least one start").0)
        };

        let fac = factorize(&x, &y_std, &hyper)?;
        Ok(Self {
            x,
            y_mean,
            y_std: y_scale,
            hyper,
            chol: fac.chol,
            alpha: fac.alpha,
            jitter: fac.jitter,
            lml: fac.lml,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Prior standard deviation on the original target scale.
    pub fn prior_std(&self) -> f64 {
        (self.hyper.log_signal_var.exp()).sqrt() * self.y_std
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    /// Posterior mean and (latent) standard deviation at a query point.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let (mean, std, _, _) = self.predict_inner(q, false);
        (mean, std)
    }

    /// Posterior mean/std plus their gradients with respect to the query.
    pub fn predict_with_grad(&self, q: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let (mean, std, dmean, dstd) = self.predict_inner(q, true);
        (mean, std, dmean.unwrap(), dstd.unwrap())
    }

    fn predict_inner(
        &self,
        q: &[f64],
        with_grad: bool,
    ) -> (f64, f64, Option<Vec<f64>>, Option<Vec<f64>>) {
        let n = self.x.len();
        let d = q.len();
        let kstar: Vec<f64> = self.x.iter().map(|xi| kernel_base(&self.hyper, q, xi)).collect();
        let mean_std: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let mean = self.y_mean + self.y_std * mean_std;

        // beta = K^-1 k*; var = k(q,q) - k*^T beta.
        let z = solve_lower(&self.chol, n, &kstar);
        let beta = solve_upper_t(&self.chol, n, &z);
        let kqq = self.hyper.log_signal_var.exp();
        let var = (kqq - kstar.iter().zip(&beta).map(|(k, b)| k * b).sum::<f64>()).max(0.0);
        let std = self.y_std * var.sqrt();

        if !with_grad {
            return (mean, std, None, None);
        }
        let mut dmean = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for (i, xi) in self.x.iter().enumerate() {
            for dd in 0..d {
                let l = self.hyper.log_lengths[dd].exp();
                let dk = kstar[i] * (-(q[dd] - xi[dd]) / (l * l));
                dmean[dd] += self.alpha[i] * dk;
                dvar[dd] += -2.0 * beta[i] * dk;
            }
        }
        let dstd: Vec<f64> = if var.sqrt() > 1e-12 {
            dvar.iter()
                .map(|dv| self.y_std * dv / (2.0 * var.sqrt()))
                .collect()
        } else {
            vec![0.0; d]
        };
        let dmean: Vec<f64> = dmean.iter().map(|v| self.y_std * v).collect();
        (mean, std, Some(dmean), Some(dstd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_points() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let y = vec![1.0, -0.5, 2.0];
        (x, y)
    }

    fn near_noiseless() -> GpHyper {
        GpHyper {
            log_signal_var: 0.0,
            log_lengths: vec![(0.3f64).ln()],
            log_noise_var: (1e-10f64).ln(),
        }
    }

    #[test]
    fn interpolates_observations_when_noise_free() {
        let (x, y) = demo_points();
        let gp = GpSurrogate::fit(
            x.clone(),
            y.clone(),
            &GpFitOpts {
                warm: Some(near_noiseless()),
                fixed: true,
                ..GpFitOpts::default()
            },
        )
        .unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mean, std) = gp.predict(xi);
            assert!((mean - yi).abs() < 1e-8, "{mean} vs {yi}");
            assert!(std < 1e-3);
        }
    }

    #[test]
    fn far_from_data_returns_prior() {
        let (x, y) = demo_points();
        let gp = GpSurrogate::fit(
            x,
            y,
            &GpFitOpts {
                warm: Some(near_noiseless()),
                fixed: true,
                ..GpFitOpts::default()
            },
        )
        .unwrap();
        // 0.3 length scale; 10+ length scales away.
        let (mean, std) = gp.predict(&[5.0]);
        assert!((mean - gp.prior_mean()).abs() < 1e-6 * gp.prior_mean().abs().max(1.0));
        assert!((std - gp.prior_std()).abs() < 1e-6);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matches_direct_dense_solve_oracle() {
        // Independent route: build K, solve the 3x3 system by Gaussian
        // elimination, and evaluate the posterior formulas directly.
        let (x, y) = demo_points();
        let hyper = near_noiseless();
        let gp = GpSurrogate::fit(
            x.clone(),
            y.clone(),
            &GpFitOpts {
                warm: Some(hyper.clone()),
                fixed: true,
                ..GpFitOpts::default()
            },
        )
        .unwrap();

        let n = 3;
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / scale).collect();
        let sv = 1.0;
        let l = 0.3;
        let nv = 1e-10;
        let k = |a: f64, b: f64| sv * (-0.5 * ((a - b) / l).powi(2)).exp();
        // Dense K with noise.
        let mut a = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = k(x[i][0], x[j][0]) + if i == j { nv } else { 0.0 };
            }
            a[i][3] = ys[i];
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..3 {
            let piv = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in col + 1..3 {
                let f = a[row][col] / a[col][col];
                for cc in col..4 {
                    a[row][cc] -= f * a[col][cc];
                }
            }
        }
        let mut alpha = [0.0; 3];
        for row in (0..3).rev() {
            let mut s = a[row][3];
            for cc in row + 1..3 {
                s -= a[row][cc] * alpha[cc];
            }
            alpha[row] = s / a[row][row];
        }
        for q in [[0.2], [0.47], [0.88], [0.05]] {
            let kq: Vec<f64> = x.iter().map(|xi| k(q[0], xi[0])).collect();
            let mean_oracle =
                y_mean + scale * kq.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
            let (mean, _) = gp.predict(&q);
            assert!(
                (mean - mean_oracle).abs() <= 1e-8,
                "{mean} vs {mean_oracle}"
            );
        }
    }

    #[test]
    fn posterior_std_never_exceeds_prior() {
        let (x, y) = demo_points();
        let gp = GpSurrogate::fit(x, y, &GpFitOpts::default()).unwrap();
        let mut r = crate::rng::seeded(5);
        for _ in 0..50 {
            let q = vec![rand::Rng::random_range(&mut r, -1.0..2.0)];
            let (_, std) = gp.predict(&q);
            assert!(std <= gp.prior_std() + 1e-9);
        }
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let (x, y) = demo_points();
        let opts = GpFitOpts {
            seed: 33,
            ..GpFitOpts::default()
        };
        let a = GpSurrogate::fit(x.clone(), y.clone(), &opts).unwrap();
        let b = GpSurrogate::fit(x, y, &opts).unwrap();
        assert_eq!(a.hyper(), b.hyper());
    }

    #[test]
    fn gradient_of_prediction_matches_finite_differences() {
        let x = vec![vec![0.1, 0.3], vec![0.6, 0.8], vec![0.4, 0.2], vec![0.9, 0.5]];
        let y = vec![0.5, 1.5, -0.7, 0.9];
        let gp = GpSurrogate::fit(x, y, &GpFitOpts::default()).unwrap();
        let q = vec![0.35, 0.55];
        let (_, _, dmean, dstd) = gp.predict_with_grad(&q);
        let h = 1e-6;
        for dd in 0..2 {
            let mut qp = q.clone();
            qp[dd] += h;
            let mut qm = q.clone();
            qm[dd] -= h;
            let (mp, sp) = gp.predict(&qp);
            let (mm, sm) = gp.predict(&qm);
            let num_mean = (mp - mm) / (2.0 * h);
            let num_std = (sp - sm) / (2.0 * h);
            assert!((dmean[dd] - num_mean).abs() < 1e-5 * num_mean.abs().max(1.0));
            assert!((dstd[dd] - num_std).abs() < 1e-5 * num_std.abs().max(1.0));
        }
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(
            GpSurrogate::fit(vec![], vec![], &GpFitOpts::default()),
            Err(CoreError::EmptyInput(_))
        ));
    }
}
