//! Uncertainty quantification on a trained model: conditional fabrication
//! sampling, lower empirical quantiles, generator fitting tests, and 1-D
//! Wasserstein distances between performance distributions.

use crate::dataset::Design;
use crate::hgan::{LatentSample, ModelCheckpoint};
use crate::objectives::ObjectiveEvaluator;
use crate::optim::{minimize_box, BoxOpts};
use crate::{rng, CoreError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A lower empirical quantile estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub tau: f64,
    pub value: f64,
    pub n_samples: usize,
    /// The sample values, sorted ascending.
    pub samples: Vec<f64>,
}

/// Lower empirical quantile: sort ascending and take the element at index
/// `ceil(tau * n) - 1`, clamped into range. The ceiling is evaluated with a
/// small relative nudge so that exact multiples of `1/n` are not pushed up a
/// rank by floating-point noise (`0.05 * 100` is a hair above 5.0 in f64).
pub fn estimate_quantile(values: &[f64], tau: f64) -> Result<QuantileEstimate> {
    if values.is_empty() {
        return Err(CoreError::EmptyInput("estimate_quantile"));
    }
    if !(0.0 < tau && tau < 1.0) {
        return Err(CoreError::Validation(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample values"));
    let n = sorted.len();
    let target = tau * n as f64;
    let rank = (target - 1e-9 * target.max(1.0)).ceil() as usize;
    let index = rank.clamp(1, n) - 1;
    Ok(QuantileEstimate {
        tau,
        value: sorted[index],
        n_samples: n,
        samples: sorted,
    })
}

/// 1-D Wasserstein-1 distance between empirical distributions, computed as
/// the area between the two piecewise-constant quantile functions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::EmptyInput("wasserstein1"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite sample values"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite sample values"));
    let (n, m) = (sa.len(), sb.len());
    let mut dist = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut q = 0.0f64;
    // Walk the merged breakpoint grid of {i/n} and {j/m}. Division is
    // correctly rounded, so equal rationals compare equal and the advance is
    // exact.
    while ia < n && ib < m {
        let qa = (ia + 1) as f64 / n as f64;
        let qb = (ib + 1) as f64 / m as f64;
        let q_next = qa.min(qb);
        dist += (q_next - q) * (sa[ia] - sb[ib]).abs();
        q = q_next;
        if qa == q_next {
            ia += 1;
        }
        if qb == q_next {
            ib += 1;
        }
    }
    Ok(dist)
}

/// Options for [`sample_fabricated`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleOpts {
    /// Draw the noise input from its prior instead of fixing it to zero. The
    /// optimization objectives evaluate the generator at zero noise, so that
    /// is the default.
    pub draw_noise: bool,
}

/// Draws `n` fabricated designs for a fixed parent code: child codes from
/// the prior, noise per `opts`. Returns raw (denormalized) designs.
pub fn sample_fabricated(
    ckpt: &ModelCheckpoint,
    parent: &[f64],
    n: usize,
    opts: SampleOpts,
    rng: &mut impl Rng,
) -> Result<Vec<Design>> {
    let priors = &ckpt.priors;
    let mut out = Vec::with_capacity(n);
    let code_std = priors.code_std();
    for _ in 0..n {
        let child: Vec<f64> = (0..priors.child_dim)
            .map(|_| code_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let noise: Vec<f64> = if opts.draw_noise {
            (0..priors.noise_dim)
                .map(|_| {
                    code_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                })
                .collect()
        } else {
            vec![0.0; priors.noise_dim]
        };
        let sample = LatentSample {
            parent: parent.to_vec(),
            child,
            noise,
        };
        out.push(ckpt.generate(&sample)?);
    }
    Ok(out)
}

/// Result of fitting the parent code to a target design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parent: Vec<f64>,
    /// Euclidean distance between the generated nominal design and the
    /// target, in the generator's normalized design space.
    pub fitting_error: f64,
    pub restarts: usize,
}

/// Options for [`fit_nominal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOpts {
    /// Number of restarts; `None` means 3x the parent latent dimension.
    pub restarts: Option<usize>,
    pub iters: usize,
    pub seed: u64,
}

impl Default for FitOpts {
    fn default() -> Self {
        Self {
            restarts: None,
            iters: 60,
            seed: 0,
        }
    }
}

/// Finds the parent code whose nominal output best matches `target_flat`
/// (a design in normalized space), by multi-start projected gradient descent
/// over `[0,1]^parent_dim` with analytic gradients through the generator.
///
/// Restart starting points are drawn sequentially from a seeded stream, so
/// restart sets are nested: more restarts can only improve the result.
pub fn fit_nominal(
    ckpt: &ModelCheckpoint,
    target_flat: &[f64],
    opts: &FitOpts,
) -> Result<FitResult> {
    let d = ckpt.priors.parent_dim;
    let restarts = opts.restarts.unwrap_or(3 * d).max(1);
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let box_opts = BoxOpts {
        max_iters: opts.iters,
        ..BoxOpts::default()
    };
    let mut start_rng = rng::stream(opts.seed, rng::tag::FIT, 0);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..restarts {
        let x0: Vec<f64> = (0..d).map(|_| start_rng.random::<f64>()).collect();
        let (x, fx) = minimize_box(
            |x| {
                let (sq, grad) = ckpt
                    .nominal_distance_sq_grad(x, target_flat)
                    .expect("dims fixed by construction");
                (sq, grad)
            },
            &x0,
            &lo,
            &hi,
            &box_opts,
        );
        if best.as_ref().map(|(_, b)| fx < *b).unwrap_or(true) {
            best = Some((x, fx));
        }
    }
    let (parent, sq) = best.expect("at least one restart");
    Ok(FitResult {
        parent,
        fitting_error: sq.sqrt(),
        restarts,
    })
}

/// Protocol constants for [`parametric_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyProtocol {
    /// Fitting-test targets per parent-dimension setting.
    pub n_fit_targets: usize,
    /// Ground-truth fabrications per generated nominal.
    pub n_fab_ground_truth: usize,
    /// Generator fabrications per generated nominal.
    pub n_fab_generated: usize,
    /// Generated nominals per child-dimension setting.
    pub n_nominals: usize,
    pub fit: FitOpts,
    pub seed: u64,
}

impl StudyProtocol {
    /// Full-protocol sample counts: 100 fitting targets, 100 + 100
    /// fabrications, 30 nominals.
    pub fn paper(seed: u64) -> Self {
        Self {
            n_fit_targets: 100,
            n_fab_ground_truth: 100,
            n_fab_generated: 100,
            n_nominals: 30,
            fit: FitOpts {
                restarts: None,
                iters: 60,
                seed,
            },
            seed,
        }
    }

    /// Desk-scale smoke counts.
    pub fn smoke(seed: u64) -> Self {
        Self {
            n_fit_targets: 10,
            n_fab_ground_truth: 10,
            n_fab_generated: 10,
            n_nominals: 3,
            fit: FitOpts {
                restarts: Some(4),
                iters: 30,
                seed,
            },
            seed,
        }
    }
}

/// One row of a study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study_kind: String,
    pub dim_setting: usize,
    pub replicate_id: usize,
    pub metric_value: f64,
}

/// Parametric-study output: fitting errors by parent dimension and
/// Wasserstein distances by child dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    /// CSV with the documented columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("study_kind,dim_setting,replicate_id,metric_value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.study_kind, row.dim_setting, row.replicate_id, row.metric_value
            ));
        }
        out
    }
}

/// Latent-dimension parametric study.
///
/// For each checkpoint in `fit_models` (keyed by parent dimension): fit
/// `n_fit_targets` dataset nominals and record the fitting errors. For each
/// checkpoint in `uq_models` (keyed by child dimension): draw `n_nominals`
/// parent codes; for each, compare the objective distribution of
/// ground-truth-perturbed fabrications against generator fabrications by
/// Wasserstein distance.
pub fn parametric_study(
    fit_models: &[(usize, &ModelCheckpoint)],
    uq_models: &[(usize, &ModelCheckpoint)],
    dataset: &crate::dataset::DesignDataset,
    objective: &ObjectiveEvaluator,
    protocol: &StudyProtocol,
) -> Result<StudyReport> {
    let mut rows = Vec::new();

    for &(parent_dim, ckpt) in fit_models {
        let mut pick = rng::stream(protocol.seed, rng::tag::STUDY, parent_dim as u64);
        for rep in 0..protocol.n_fit_targets {
            let i = pick.random_range(0..dataset.n_nominal());
            let target = dataset.normalize(dataset.nominal_flat(i));
            let mut fit_opts = protocol.fit;
            fit_opts.seed = rng::mix(protocol.seed, rng::tag::FIT, (parent_dim * 10_000 + rep) as u64);
            let fit = fit_nominal(ckpt, &target, &fit_opts)?;
            rows.push(StudyRow {
                study_kind: "fitting_error".into(),
                dim_setting: parent_dim,
                replicate_id: rep,
                metric_value: fit.fitting_error,
            });
        }
    }

    for &(child_dim, ckpt) in uq_models {
        for rep in 0..protocol.n_nominals {
            let mut r = rng::stream(
                protocol.seed,
                rng::tag::STUDY ^ 0x77,
                (child_dim * 10_000 + rep) as u64,
            );
            let parent: Vec<f64> = (0..ckpt.priors.parent_dim)
                .map(|_| r.random::<f64>())
                .collect();
            let nominal = ckpt.generate(&LatentSample::nominal(
                parent.clone(),
                ckpt.priors.child_dim,
                ckpt.priors.noise_dim,
            ))?;

            // Ground truth: perturb the generated nominal the same way the
            // training data was produced.
            let mut truth_values = Vec::with_capacity(protocol.n_fab_ground_truth);
            for _ in 0..protocol.n_fab_ground_truth {
                let fab = crate::dataset::perturb_like_training(dataset, &nominal, &mut r)?;
                match objective.evaluate(&fab) {
                    Ok(v) => truth_values.push(v),
                    Err(e) if e.is_infeasible() => {}
                    Err(e) => return Err(e),
                }
            }
            // Generator fabrications.
            let fabs = sample_fabricated(
                ckpt,
                &parent,
                protocol.n_fab_generated,
                SampleOpts::default(),
                &mut r,
            )?;
            let mut gen_values = Vec::with_capacity(fabs.len());
            for fab in &fabs {
                match objective.evaluate(fab) {
                    Ok(v) => gen_values.push(v),
                    Err(e) if e.is_infeasible() => {}
                    Err(e) => return Err(e),
                }
            }
            if truth_values.is_empty() || gen_values.is_empty() {
                return Err(CoreError::Infeasible(
                    "all fabrications infeasible in study replicate".into(),
                ));
            }
            rows.push(StudyRow {
                study_kind: "wasserstein".into(),
                dim_setting: child_dim,
                replicate_id: rep,
                metric_value: wasserstein1(&truth_values, &gen_values)?,
            });
        }
    }

    Ok(StudyReport { rows })
}
