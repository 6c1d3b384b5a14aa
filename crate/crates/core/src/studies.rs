//! End-to-end experiment recipes: synthesize data, train, run the
//! parametric study, optimize under both objective modes, and render the
//! comparison outputs. Small presets finish in minutes on a laptop;
//! full-scale presets keep the complete protocol constants.

use crate::dataset::{self, BuildConfig, Design, DesignKind};
use crate::geometry::PerturbationConfig;
use crate::hgan::{self, LatentSample, ModelCheckpoint, PriorConfig, TrainConfig};
use crate::objectives::ObjectiveEvaluator;
use crate::optimizer::{
    bayes_optimize_design, BoBudget, BoOpts, BoTrace, RobustConfig, RobustMode,
};
use crate::uq::{self, estimate_quantile, StudyProtocol};
use crate::{report, rng, CoreError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeName {
    AirfoilSmall,
    AirfoilPaper,
    MetasurfaceSmall,
    MetasurfacePaper,
}

impl std::str::FromStr for RecipeName {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "airfoil_small" => Ok(Self::AirfoilSmall),
            "airfoil_paper" => Ok(Self::AirfoilPaper),
            "metasurface_small" => Ok(Self::MetasurfaceSmall),
            "metasurface_paper" => Ok(Self::MetasurfacePaper),
            other => Err(CoreError::Config(format!(
                "unknown recipe `{other}` (expected airfoil_small, airfoil_paper, metasurface_small, metasurface_paper)"
            ))),
        }
    }
}

impl std::fmt::Display for RecipeName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::AirfoilSmall => "airfoil_small",
            Self::AirfoilPaper => "airfoil_paper",
            Self::MetasurfaceSmall => "metasurface_small",
            Self::MetasurfacePaper => "metasurface_paper",
        };
        write!(f, "{s}")
    }
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: RecipeName,
    pub seed: u64,
    pub dataset: BuildConfig,
    pub priors: PriorConfig,
    pub train: TrainConfig,
    pub budget: BoBudget,
    pub robust: RobustConfig,
    pub study: StudyProtocol,
    /// Monte Carlo draws for the final ground-truth comparison table.
    pub ground_truth_mc: usize,
}

/// Builds the preset configuration for a name and seed.
pub fn recipe(name: RecipeName, seed: u64) -> Recipe {
    match name {
        RecipeName::AirfoilSmall => Recipe {
            name,
            seed,
            dataset: BuildConfig {
                kind: DesignKind::Airfoil,
                n_nominal: 64,
                m_fabricated: 5,
                perturbation: PerturbationConfig::airfoil_default(seed),
                airfoil_source: dataset::AirfoilSource::Synthetic,
                master_seed: seed,
            },
            priors: PriorConfig {
                parent_dim: 4,
                child_dim: 3,
                noise_dim: 10,
            },
            train: TrainConfig {
                steps: 500,
                batch_size: 32,
                lr_g: 1e-4,
                lr_d: 1e-4,
                lambda_info: 1.0,
                seed,
                checkpoint_every: 0,
            },
            budget: BoBudget { n_init: 8, n_seq: 12 },
            robust: RobustConfig {
                mode: RobustMode::Quantile { tau: 0.05 },
                mc_samples: 25,
            },
            study: StudyProtocol::smoke(seed),
            ground_truth_mc: 300,
        },
        RecipeName::AirfoilPaper => Recipe {
            name,
            seed,
            dataset: BuildConfig::airfoil_default(seed),
            priors: PriorConfig::airfoil_paper(),
            train: TrainConfig::airfoil_paper(seed),
            budget: BoBudget {
                n_init: 21,
                n_seq: 119,
            },
            robust: RobustConfig::airfoil_quantile(),
            study: StudyProtocol::paper(seed),
            ground_truth_mc: 1000,
        },
        RecipeName::MetasurfaceSmall => Recipe {
            name,
            seed,
            dataset: BuildConfig {
                kind: DesignKind::Metasurface,
                n_nominal: 24,
                m_fabricated: 3,
                perturbation: PerturbationConfig::metasurface_default(seed),
                airfoil_source: dataset::AirfoilSource::Synthetic,
                master_seed: seed,
            },
            priors: PriorConfig {
                parent_dim: 3,
                child_dim: 4,
                noise_dim: 10,
            },
            train: TrainConfig {
                steps: 120,
                batch_size: 16,
                lr_g: 1e-4,
                lr_d: 1e-4,
                lambda_info: 1.0,
                seed,
                checkpoint_every: 0,
            },
            budget: BoBudget { n_init: 4, n_seq: 6 },
            robust: RobustConfig {
                mode: RobustMode::Quantile { tau: 0.05 },
                mc_samples: 5,
            },
            study: StudyProtocol {
                n_fit_targets: 5,
                n_fab_ground_truth: 5,
                n_fab_generated: 5,
                n_nominals: 2,
                fit: uq::FitOpts {
                    restarts: Some(3),
                    iters: 20,
                    seed,
                },
                seed,
            },
            ground_truth_mc: 50,
        },
        RecipeName::MetasurfacePaper => Recipe {
            name,
            seed,
            dataset: BuildConfig::metasurface_default(seed),
            priors: PriorConfig::metasurface_paper(),
            train: TrainConfig::metasurface_paper(seed),
            budget: BoBudget {
                n_init: 15,
                n_seq: 85,
            },
            robust: RobustConfig::metasurface_quantile(),
            study: StudyProtocol::paper(seed),
            ground_truth_mc: 1000,
        },
    }
}

impl Recipe {
    pub fn evaluator(&self) -> ObjectiveEvaluator {
        match self.dataset.kind {
            DesignKind::Airfoil => ObjectiveEvaluator::airfoil_default(),
            DesignKind::Metasurface => ObjectiveEvaluator::metasurface_default(),
        }
    }

    fn quantile_tau(&self) -> f64 {
        match self.robust.mode {
            RobustMode::Quantile { tau } => tau,
            _ => 0.05,
        }
    }
}

/// Ground-truth evaluation of one optimization solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub parent: Vec<f64>,
    /// The estimate BO reported for its incumbent.
    pub bo_best_estimate: f64,
    /// Nominal score of the decoded design.
    pub nominal_score: f64,
    /// Lower tau-quantile of the ground-truth fabrication Monte Carlo.
    pub quantile_score: f64,
    /// The ground-truth fabricated performance sample.
    pub mc_values: Vec<f64>,
}

/// Recipe output: both solutions and where everything was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub name: RecipeName,
    pub seed: u64,
    pub tau: f64,
    pub standard: SolutionSummary,
    pub robust: SolutionSummary,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CoreError::io(path, e))
}

/// Ground-truth evaluation of a parent code: decode the nominal design,
/// score it, and Monte Carlo the dataset's own fabrication process over it.
#[allow(clippy::too_many_arguments)]
pub fn ground_truth_summary(
    ckpt: &ModelCheckpoint,
    dataset: &dataset::DesignDataset,
    evaluator: &ObjectiveEvaluator,
    parent: &[f64],
    bo_best_estimate: f64,
    tau: f64,
    n_mc: usize,
    seed: u64,
) -> Result<SolutionSummary> {
    let nominal = ckpt.generate(&LatentSample::nominal(
        parent.to_vec(),
        ckpt.priors.child_dim,
        ckpt.priors.noise_dim,
    ))?;
    let nominal_score = evaluator.evaluate(&nominal)?;
    let mut values = Vec::with_capacity(n_mc);
    for k in 0..n_mc {
        let mut r = rng::stream(seed, rng::tag::FIXTURE, k as u64);
        let fab = dataset::perturb_like_training(dataset, &nominal, &mut r)?;
        match evaluator.evaluate(&fab) {
            Ok(v) => values.push(v),
            Err(e) if e.is_infeasible() => {}
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(CoreError::Infeasible(
            "every ground-truth fabrication of the solution is infeasible".into(),
        ));
    }
    let quantile_score = estimate_quantile(&values, tau)?.value;
    Ok(SolutionSummary {
        parent: parent.to_vec(),
        bo_best_estimate,
        nominal_score,
        quantile_score,
        mc_values: values,
    })
}

/// Writes a solution's design files: the nominal design and a handful of
/// generator fabrications.
fn write_solution_designs(
    dir: &Path,
    tag: &str,
    ckpt: &ModelCheckpoint,
    parent: &[f64],
    seed: u64,
) -> Result<()> {
    let nominal = ckpt.generate(&LatentSample::nominal(
        parent.to_vec(),
        ckpt.priors.child_dim,
        ckpt.priors.noise_dim,
    ))?;
    let (extents, flat) = match &nominal {
        Design::Airfoil(a) => (vec![192u64, 2], a.to_flat()),
        Design::Metasurface(m) => (vec![64u64, 64], m.to_flat()),
    };
    dataset::binfmt::write_array(
        &dir.join(format!("solution_{tag}_nominal.bin")),
        &dataset::binfmt::Array::new(extents, flat)?,
    )?;

    let n_fabs = 16usize;
    let mut r = rng::stream(seed, rng::tag::MC, 0xFAB5);
    let fabs = uq::sample_fabricated(ckpt, parent, n_fabs, uq::SampleOpts::default(), &mut r)?;
    let dim = ckpt.kind.dim();
    let mut all = Vec::with_capacity(n_fabs * dim);
    for f in &fabs {
        all.extend(f.to_flat());
    }
    dataset::binfmt::write_array(
        &dir.join(format!("solution_{tag}_fabrications.bin")),
        &dataset::binfmt::Array::new(vec![n_fabs as u64, dim as u64], all)?,
    )?;
    Ok(())
}

/// Runs the full pipeline into `out_dir`: dataset, training, study,
/// standard and robust optimization, plots, and the comparison summary.
pub fn run_recipe(rec: &Recipe, out_dir: &Path) -> Result<RecipeReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    write(
        &out_dir.join("config.json"),
        &serde_json::to_string_pretty(rec).map_err(|e| CoreError::Manifest(e.to_string()))?,
    )?;

    // -- synth -------------------------------------------------------------
    let ds = dataset::build_dataset(&rec.dataset)?;
    dataset::save(&ds, &out_dir.join("dataset"))?;

    // -- train -------------------------------------------------------------
    let outcome = hgan::train(&ds, &rec.train, &rec.priors, None)?;
    if let Some(abort) = outcome.aborted {
        return Err(CoreError::NonFiniteLoss {
            step: abort.step,
            loss_d: abort.loss_d,
            loss_g: abort.loss_g,
        });
    }
    let ckpt = outcome.checkpoint;
    ckpt.save(&out_dir.join("model.ckpt"))?;
    write(
        &out_dir.join("train_loss.csv"),
        &report::loss_history_csv(&ckpt.loss_history),
    )?;

    // -- study -------------------------------------------------------------
    let evaluator = rec.evaluator();
    let study = uq::parametric_study(
        &[(rec.priors.parent_dim, &ckpt)],
        &[(rec.priors.child_dim, &ckpt)],
        &ds,
        &evaluator,
        &rec.study,
    )?;
    write(&out_dir.join("study.csv"), &study.to_csv())?;

    // -- optimize: standard then robust --------------------------------------
    let run_mode = |mode_tag: &str, robust: &RobustConfig| -> Result<BoTrace> {
        let opts = BoOpts::new(rng::mix(rec.seed, rng::tag::MC, mode_tag.len() as u64));
        let trace = bayes_optimize_design(&ckpt, &evaluator, robust, &rec.budget, &opts)?;
        write(
            &out_dir.join(format!("opt_{mode_tag}.jsonl")),
            &trace.to_jsonl(),
        )?;
        write(
            &out_dir.join(format!("opt_{mode_tag}.csv")),
            &trace.to_csv(),
        )?;
        Ok(trace)
    };
    let trace_nominal = run_mode("nominal", &RobustConfig::nominal())?;
    let trace_quantile = run_mode("quantile", &rec.robust)?;

    let best_of = |trace: &BoTrace, what: &str| -> Result<(Vec<f64>, f64)> {
        match (&trace.best_parent, trace.best_value) {
            (Some(p), Some(v)) => Ok((p.clone(), v)),
            _ => Err(CoreError::Infeasible(format!(
                "{what} optimization found no feasible solution"
            ))),
        }
    };
    let (std_parent, std_est) = best_of(&trace_nominal, "standard")?;
    let (rob_parent, rob_est) = best_of(&trace_quantile, "robust")?;

    // -- ground-truth comparison -------------------------------------------
    let tau = rec.quantile_tau();
    let standard = ground_truth_summary(
        &ckpt,
        &ds,
        &evaluator,
        &std_parent,
        std_est,
        tau,
        rec.ground_truth_mc,
        rng::mix(rec.seed, rng::tag::FIXTURE, 1),
    )?;
    let robust = ground_truth_summary(
        &ckpt,
        &ds,
        &evaluator,
        &rob_parent,
        rob_est,
        tau,
        rec.ground_truth_mc,
        rng::mix(rec.seed, rng::tag::FIXTURE, 2),
    )?;

    write_solution_designs(out_dir, "standard", &ckpt, &std_parent, rec.seed)?;
    write_solution_designs(out_dir, "robust", &ckpt, &rob_parent, rec.seed)?;

    // -- plots ---------------------------------------------------------------
    write(
        &out_dir.join("performance_histogram.svg"),
        &report::histogram_svg(
            &[
                ("standard solution", &standard.mc_values),
                ("robust solution", &robust.mc_values),
            ],
            "fabricated performance distributions",
            "objective",
        ),
    )?;
    write(
        &out_dir.join("convergence.svg"),
        &report::convergence_svg(
            &[
                ("standard", &trace_nominal),
                ("robust", &trace_quantile),
            ],
            "optimization convergence",
        ),
    )?;

    // -- summary ---------------------------------------------------------------
    let report = RecipeReport {
        name: rec.name,
        seed: rec.seed,
        tau,
        standard,
        robust,
    };
    let mut summary = serde_json::to_value(&report).map_err(|e| CoreError::Manifest(e.to_string()))?;
    // The comparison table, explicit and flat.
    summary["comparison"] = serde_json::json!({
        "standard": { "nominal": report.standard.nominal_score, "quantile": report.standard.quantile_score },
        "robust": { "nominal": report.robust.nominal_score, "quantile": report.robust.quantile_score },
    });
    write(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| CoreError::Manifest(e.to_string()))?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets_encode_protocol_constants() {
        let air = recipe(RecipeName::AirfoilPaper, 0);
        assert_eq!(air.dataset.n_nominal, 1528);
        assert_eq!(air.dataset.m_fabricated, 10);
        assert_eq!(air.priors.parent_dim, 7);
        assert_eq!(air.priors.child_dim, 5);
        assert_eq!(air.priors.noise_dim, 10);
        assert_eq!(air.train.steps, 20_000);
        assert_eq!(air.train.batch_size, 32);
        assert_eq!(air.train.lr_g, 1e-4);
        assert_eq!(air.budget, BoBudget { n_init: 21, n_seq: 119 });
        assert_eq!(air.robust.mc_samples, 100);
        assert!(matches!(air.robust.mode, RobustMode::Quantile { tau } if tau == 0.05));

        let meta = recipe(RecipeName::MetasurfacePaper, 0);
        assert_eq!(meta.dataset.n_nominal, 1000);
        assert_eq!(meta.priors.parent_dim, 5);
        assert_eq!(meta.priors.child_dim, 10);
        assert_eq!(meta.train.steps, 50_000);
        assert_eq!(meta.budget, BoBudget { n_init: 15, n_seq: 85 });
        assert_eq!(meta.robust.mc_samples, 20);
    }

    #[test]
    fn small_preset_matches_documented_shape() {
        let rec = recipe(RecipeName::AirfoilSmall, 5);
        assert_eq!(rec.dataset.n_nominal, 64);
        assert_eq!(rec.dataset.m_fabricated, 5);
        assert_eq!(rec.train.steps, 500);
        assert_eq!(rec.budget, BoBudget { n_init: 8, n_seq: 12 });
        assert_eq!(rec.robust.mc_samples, 25);
    }

    #[test]
    fn recipe_names_roundtrip() {
        for name in [
            RecipeName::AirfoilSmall,
            RecipeName::AirfoilPaper,
            RecipeName::MetasurfaceSmall,
            RecipeName::MetasurfacePaper,
        ] {
            let s = name.to_string();
            let back: RecipeName = s.parse().unwrap();
            assert_eq!(name, back);
        }
        assert!("bogus".parse::<RecipeName>().is_err());
    }
}
