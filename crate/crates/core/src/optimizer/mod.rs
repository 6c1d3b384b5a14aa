//! Bayesian design optimization over the parent latent space.
//!
//! The loop is classic: Latin hypercube initialization, a Gaussian-process
//! surrogate refit (warm-started) every iteration, and expected-improvement
//! maximization by multi-start projected gradient over `[0,1]^d`. Objective
//! modes cover plain nominal performance and the risk-adjusted statistics
//! (Monte Carlo quantile, mean minus k*std, and empirical reliability
//! against a threshold).

mod bo;
mod ei;
mod gp;
mod lhs;

pub use bo::{
    bayes_optimize, bayes_optimize_design, BoBudget, BoOpts, BoRecord, BoTrace, EvalOutcome,
    Phase,
};
pub use ei::expected_improvement;
pub use gp::{GpFitOpts, GpHyper, GpSurrogate};
pub use lhs::lhs;

use crate::dataset::Design;
use crate::hgan::{LatentSample, ModelCheckpoint};
use crate::objectives::ObjectiveEvaluator;
use crate::uq::estimate_quantile;
use crate::{rng, CoreError, Result};
use serde::{Deserialize, Serialize};

/// Objective mode for design evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RobustMode {
    /// Deterministic performance of the nominal design: `f(G(c_p, 0, 0))`.
    Nominal,
    /// Lower `tau`-quantile of fabricated performance by Monte Carlo.
    Quantile { tau: f64 },
    /// Mean minus `k` standard deviations of fabricated performance
    /// (maximization form of the mean/variance trade-off).
    MeanStd { k: f64 },
    /// Empirical probability that fabricated performance reaches `c_star`;
    /// feasible when the failure probability stays within `alpha_star`.
    Reliability { c_star: f64, alpha_star: f64 },
}

/// Objective mode plus its Monte Carlo budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub mode: RobustMode,
    pub mc_samples: usize,
}

impl RobustConfig {
    pub fn nominal() -> Self {
        Self {
            mode: RobustMode::Nominal,
            mc_samples: 1,
        }
    }

    /// Full-scale airfoil protocol: 5% quantile from 100 Monte Carlo samples.
    pub fn airfoil_quantile() -> Self {
        Self {
            mode: RobustMode::Quantile { tau: 0.05 },
            mc_samples: 100,
        }
    }

    /// Full-scale metasurface protocol: 5% quantile from 20 Monte Carlo samples.
    pub fn metasurface_quantile() -> Self {
        Self {
            mode: RobustMode::Quantile { tau: 0.05 },
            mc_samples: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.mode, RobustMode::Nominal) && self.mc_samples == 0 {
            return Err(CoreError::Validation(
                "mc_samples must be at least 1 for risk-adjusted modes".into(),
            ));
        }
        if let RobustMode::Quantile { tau } = self.mode {
            if !(0.0 < tau && tau < 1.0) {
                return Err(CoreError::Validation(format!(
                    "tau must lie in (0,1), got {tau}"
                )));
            }
        }
        Ok(())
    }
}

/// A single objective evaluation at one parent code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub feasible: bool,
    /// Monte Carlo sample values behind the estimate (empty in nominal mode
    /// beyond the single evaluation).
    pub mc_values: Vec<f64>,
}

/// Evaluates the configured objective at a parent code.
///
/// Monte Carlo modes draw fresh child codes per call (generator noise fixed
/// at zero), evaluate the denormalized fabrications, and reduce per the
/// mode. Individual infeasible samples are dropped; if every sample is
/// infeasible the whole evaluation is the infeasible marker.
pub fn evaluate_design_objective(
    ckpt: &ModelCheckpoint,
    parent: &[f64],
    evaluator: &ObjectiveEvaluator,
    cfg: &RobustConfig,
    mc_seed: u64,
) -> Result<ObjectiveValue> {
    cfg.validate()?;
    match cfg.mode {
        RobustMode::Nominal => {
            let design = ckpt.generate(&LatentSample::nominal(
                parent.to_vec(),
                ckpt.priors.child_dim,
                ckpt.priors.noise_dim,
            ))?;
            let value = match evaluator.evaluate(&design) {
                Ok(v) => v,
                Err(e) if e.is_infeasible() => return Err(e),
                Err(e) => return Err(e),
            };
            Ok(ObjectiveValue {
                value,
                feasible: true,
                mc_values: vec![value],
            })
        }
        mode => {
            let mut mc_rng = rng::seeded(mc_seed);
            let designs: Vec<Design> = crate::uq::sample_fabricated(
                ckpt,
                parent,
                cfg.mc_samples,
                crate::uq::SampleOpts::default(),
                &mut mc_rng,
            )?;
            let mut values = Vec::with_capacity(designs.len());
            for design in &designs {
                match evaluator.evaluate(design) {
                    Ok(v) => values.push(v),
                    Err(e) if e.is_infeasible() => {}
                    Err(e) => return Err(e),
                }
            }
            if values.is_empty() {
                return Err(CoreError::Infeasible(
                    "all Monte Carlo fabrications infeasible".into(),
                ));
            }
            let (value, feasible) = match mode {
                RobustMode::Quantile { tau } => {
                    (estimate_quantile(&values, tau)?.value, true)
                }
                RobustMode::MeanStd { k } => {
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean - k * var.sqrt(), true)
                }
                RobustMode::Reliability { c_star, alpha_star } => {
                    let hits = values.iter().filter(|&&v| v >= c_star).count();
                    let reliability = hits as f64 / values.len() as f64;
                    (reliability, 1.0 - reliability <= alpha_star)
                }
                RobustMode::Nominal => unreachable!("handled above"),
            };
            Ok(ObjectiveValue {
                value,
                feasible,
                mc_values: values,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, AirfoilSource, BuildConfig, DesignKind};
    use crate::geometry::PerturbationConfig;
    use crate::hgan::{ModelCheckpoint, PriorConfig, TrainConfig};

    fn toy_checkpoint() -> ModelCheckpoint {
        let ds = build_dataset(&BuildConfig {
            kind: DesignKind::Airfoil,
            n_nominal: 6,
            m_fabricated: 2,
            perturbation: PerturbationConfig::airfoil_default(2),
            airfoil_source: AirfoilSource::Synthetic,
            master_seed: 2,
        })
        .unwrap();
        ModelCheckpoint::init(
            DesignKind::Airfoil,
            PriorConfig {
                parent_dim: 3,
                child_dim: 2,
                noise_dim: 4,
            },
            TrainConfig::smoke(8),
            ds.normalization().clone(),
        )
        .unwrap()
    }

    #[test]
    fn quantile_with_one_sample_is_that_sample() {
        let ckpt = toy_checkpoint();
        let evaluator = ObjectiveEvaluator::airfoil_default();
        let cfg = RobustConfig {
            mode: RobustMode::Quantile { tau: 0.05 },
            mc_samples: 1,
        };
        let out = evaluate_design_objective(&ckpt, &[0.5, 0.5, 0.5], &evaluator, &cfg, 4).unwrap();
        assert_eq!(out.mc_values.len(), 1);
        assert_eq!(out.value, out.mc_values[0]);
    }

    #[test]
    fn mean_std_with_zero_k_is_mc_mean() {
        let ckpt = toy_checkpoint();
        let evaluator = ObjectiveEvaluator::airfoil_default();
        let cfg = RobustConfig {
            mode: RobustMode::MeanStd { k: 0.0 },
            mc_samples: 8,
        };
        let out = evaluate_design_objective(&ckpt, &[0.2, 0.8, 0.5], &evaluator, &cfg, 4).unwrap();
        let mean = out.mc_values.iter().sum::<f64>() / out.mc_values.len() as f64;
        assert!((out.value - mean).abs() < 1e-12);
    }

    #[test]
    fn nominal_mode_is_deterministic_in_seed() {
        let ckpt = toy_checkpoint();
        let evaluator = ObjectiveEvaluator::airfoil_default();
        let cfg = RobustConfig::nominal();
        let a = evaluate_design_objective(&ckpt, &[0.3, 0.3, 0.9], &evaluator, &cfg, 1).unwrap();
        let b = evaluate_design_objective(&ckpt, &[0.3, 0.3, 0.9], &evaluator, &cfg, 999).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn reliability_mode_reports_feasibility() {
        let ckpt = toy_checkpoint();
        let evaluator = ObjectiveEvaluator::airfoil_default();
        let cfg = RobustConfig {
            mode: RobustMode::Reliability {
                c_star: -1e9,
                alpha_star: 0.5,
            },
            mc_samples: 4,
        };
        let out = evaluate_design_objective(&ckpt, &[0.5, 0.5, 0.5], &evaluator, &cfg, 11).unwrap();
        assert_eq!(out.value, 1.0);
        assert!(out.feasible);
    }
}
