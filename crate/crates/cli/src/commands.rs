//! Command implementations. Each writes a `config.json` with its resolved
//! arguments next to its outputs.

use crate::{
    CliError, FixtureVerifyArgs, OptimizeArgs, PlotArgs, RecipeArgs, StudyArgs, SynthArgs,
    TrainArgs, UqArgs,
};
use duq_core::dataset::{self, AirfoilSource, BuildConfig, DesignKind};
use duq_core::geometry::PerturbationConfig;
use duq_core::hgan::{self, LatentSample, ModelCheckpoint, PriorConfig, TrainConfig};
use duq_core::objectives::{fixture, ObjectiveEvaluator};
use duq_core::optimizer::{
    bayes_optimize_design, BoBudget, BoOpts, BoTrace, RobustConfig, RobustMode,
};
use duq_core::uq::{estimate_quantile, wasserstein1, FitOpts, SampleOpts, StudyProtocol};
use duq_core::{report, rng, studies};
use serde::Serialize;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

/// Refuses to write into an existing non-empty directory unless forced,
/// then creates it.
fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let non_empty = std::fs::read_dir(path)
            .map(|mut it| it.next().is_some())
            .unwrap_or(false);
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to write into it",
                path.display()
            )));
        }
    }
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn write_config<A: Serialize>(dir: &Path, args: &A) -> Result<()> {
    let json = serde_json::to_string_pretty(args)
        .map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
    write_file(&dir.join("config.json"), &json)
}

fn parse_kind(s: &str) -> Result<DesignKind> {
    match s {
        "airfoil" => Ok(DesignKind::Airfoil),
        "metasurface" => Ok(DesignKind::Metasurface),
        other => Err(CliError::Config(format!(
            "unknown design kind `{other}` (expected airfoil or metasurface)"
        ))),
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let kind = parse_kind(&args.kind)?;
    prepare_out_dir(&args.out, args.force)?;
    let default = match kind {
        DesignKind::Airfoil => PerturbationConfig::airfoil_default(args.seed),
        DesignKind::Metasurface => PerturbationConfig::metasurface_default(args.seed),
    };
    let cfg = BuildConfig {
        kind,
        n_nominal: args.n,
        m_fabricated: args.m,
        perturbation: PerturbationConfig {
            noise_std: args.noise_std.unwrap_or(default.noise_std),
            filter_std: args.filter_std.unwrap_or(default.filter_std),
            seed: args.seed,
        },
        airfoil_source: match &args.source {
            Some(dir) => AirfoilSource::Directory { path: dir.clone() },
            None => AirfoilSource::Synthetic,
        },
        master_seed: args.seed,
    };
    let ds = dataset::build_dataset(&cfg)?;
    dataset::save(&ds, &args.out)?;
    write_config(&args.out, &args)?;
    println!(
        "dataset: {} nominal + {} fabricated {} designs -> {}",
        ds.n_nominal(),
        ds.n_nominal() * ds.m_fabricated(),
        ds.kind(),
        args.out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    prepare_out_dir(&args.out, args.force)?;
    let ds = dataset::load(&args.dataset)?;
    let priors = PriorConfig {
        parent_dim: args.parent_dim,
        child_dim: args.child_dim,
        noise_dim: args.noise_dim,
    };
    let cfg = TrainConfig {
        steps: args.steps,
        batch_size: args.batch,
        lr_g: args.lr,
        lr_d: args.lr,
        lambda_info: args.lambda,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
    };
    let out_dir = args.out.clone();
    let mut save_intermediate = |ckpt: &ModelCheckpoint| -> duq_core::Result<()> {
        ckpt.save(&out_dir.join(format!("checkpoint_step{}.ckpt", ckpt.step)))
    };
    let outcome = hgan::train(&ds, &cfg, &priors, Some(&mut save_intermediate))?;
    let ckpt = outcome.checkpoint;
    ckpt.save(&args.out.join("model.ckpt"))?;
    write_file(
        &args.out.join("train_loss.csv"),
        &report::loss_history_csv(&ckpt.loss_history),
    )?;
    write_config(&args.out, &args)?;
    if let Some(abort) = outcome.aborted {
        return Err(CliError::Runtime(format!(
            "training aborted at step {} on a non-finite loss (loss_d={}, loss_g={}); last checkpoint saved to {}",
            abort.step,
            abort.loss_d,
            abort.loss_g,
            args.out.join("model.ckpt").display()
        )));
    }
    println!(
        "trained {} steps ({} parameters) -> {}",
        ckpt.step,
        ckpt.num_parameters(),
        args.out.display()
    );
    Ok(())
}

pub fn uq(args: UqArgs) -> Result<()> {
    prepare_out_dir(&args.out, args.force)?;
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let ds = dataset::load(&args.dataset)?;
    let evaluator = match ckpt.kind {
        DesignKind::Airfoil => ObjectiveEvaluator::airfoil_default(),
        DesignKind::Metasurface => ObjectiveEvaluator::metasurface_default(),
    };
    let mut csv = String::from("nominal_id,quantile,wasserstein\n");
    for rep in 0..args.nominals {
        let mut r = rng::stream(args.seed, rng::tag::MC, rep as u64);
        let parent = ckpt.priors.sample_parent(&mut r);
        let nominal = ckpt.generate(&LatentSample::nominal(
            parent.clone(),
            ckpt.priors.child_dim,
            ckpt.priors.noise_dim,
        ))?;

        // Ground-truth and generator fabrication objective samples.
        let mut truth = Vec::with_capacity(args.mc);
        for _ in 0..args.mc {
            let fab = dataset::perturb_like_training(&ds, &nominal, &mut r)?;
            match evaluator.evaluate(&fab) {
                Ok(v) => truth.push(v),
                Err(e) if e.is_infeasible() => {}
                Err(e) => return Err(e.into()),
            }
        }
        let fabs =
            duq_core::uq::sample_fabricated(&ckpt, &parent, args.mc, SampleOpts::default(), &mut r)?;
        let mut generated = Vec::with_capacity(fabs.len());
        for fab in &fabs {
            match evaluator.evaluate(fab) {
                Ok(v) => generated.push(v),
                Err(e) if e.is_infeasible() => {}
                Err(e) => return Err(e.into()),
            }
        }
        if truth.is_empty() || generated.is_empty() {
            return Err(CliError::Runtime(format!(
                "nominal {rep}: all fabrications infeasible"
            )));
        }
        let q = estimate_quantile(&generated, args.tau)?;
        let w = wasserstein1(&truth, &generated)?;
        csv.push_str(&format!("{rep},{},{}\n", q.value, w));
    }
    write_file(&args.out.join("uq_report.csv"), &csv)?;
    write_config(&args.out, &args)?;
    println!("uq report -> {}", args.out.join("uq_report.csv").display());
    Ok(())
}

fn parse_mode(args: &OptimizeArgs) -> Result<RobustConfig> {
    let mode = match args.mode.as_str() {
        "nominal" => RobustMode::Nominal,
        "quantile" => RobustMode::Quantile { tau: args.tau },
        "mean-std" => RobustMode::MeanStd { k: args.k },
        "reliability" => RobustMode::Reliability {
            c_star: args.c_star,
            alpha_star: args.alpha_star,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown mode `{other}` (expected nominal, quantile, mean-std, reliability)"
            )))
        }
    };
    let cfg = RobustConfig {
        mode,
        mc_samples: args.mc,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    prepare_out_dir(&args.out, args.force)?;
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let robust = parse_mode(&args)?;
    let evaluator = match ckpt.kind {
        DesignKind::Airfoil => ObjectiveEvaluator::airfoil_default(),
        DesignKind::Metasurface => ObjectiveEvaluator::metasurface_default(),
    };
    let budget = BoBudget {
        n_init: args.init,
        n_seq: args.iters,
    };
    let mut opts = BoOpts::new(args.seed);
    opts.crn = args.crn;
    let trace = bayes_optimize_design(&ckpt, &evaluator, &robust, &budget, &opts)?;
    write_file(&args.out.join("trace.jsonl"), &trace.to_jsonl())?;
    write_file(&args.out.join("trace.csv"), &trace.to_csv())?;
    write_file(
        &args.out.join("summary.json"),
        &serde_json::to_string_pretty(&trace.summary_json())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    let Some(best) = trace.best_parent.clone() else {
        write_config(&args.out, &args)?;
        return Err(CliError::Runtime(
            "optimization found no feasible solution".into(),
        ));
    };
    write_solution_files(&args.out, &ckpt, &best, args.seed)?;
    write_config(&args.out, &args)?;
    println!(
        "best objective estimate {} at {:?} -> {}",
        trace.best_value.unwrap_or(f64::NAN),
        best,
        args.out.display()
    );
    Ok(())
}

fn write_solution_files(
    dir: &Path,
    ckpt: &ModelCheckpoint,
    parent: &[f64],
    seed: u64,
) -> Result<()> {
    let nominal = ckpt.generate(&LatentSample::nominal(
        parent.to_vec(),
        ckpt.priors.child_dim,
        ckpt.priors.noise_dim,
    ))?;
    let extents = match ckpt.kind {
        DesignKind::Airfoil => vec![192u64, 2],
        DesignKind::Metasurface => vec![64u64, 64],
    };
    dataset::binfmt::write_array(
        &dir.join("solution_nominal.bin"),
        &dataset::binfmt::Array::new(extents, nominal.to_flat())?,
    )?;
    let n_fabs = 16usize;
    let mut r = rng::stream(seed, rng::tag::MC, 0xFAB5);
    let fabs = duq_core::uq::sample_fabricated(ckpt, parent, n_fabs, SampleOpts::default(), &mut r)?;
    let dim = ckpt.kind.dim();
    let mut all = Vec::with_capacity(n_fabs * dim);
    for f in &fabs {
        all.extend(f.to_flat());
    }
    dataset::binfmt::write_array(
        &dir.join("solution_fabrications.bin"),
        &dataset::binfmt::Array::new(vec![n_fabs as u64, dim as u64], all)?,
    )?;
    Ok(())
}

pub fn study(args: StudyArgs) -> Result<()> {
    prepare_out_dir(&args.out, args.force)?;
    if args.parent_dims.is_empty() || args.child_dims.is_empty() {
        return Err(CliError::Config(
            "study needs at least one parent and one child dimension".into(),
        ));
    }
    let ds = dataset::load(&args.dataset)?;
    let evaluator = match ds.kind() {
        DesignKind::Airfoil => ObjectiveEvaluator::airfoil_default(),
        DesignKind::Metasurface => ObjectiveEvaluator::metasurface_default(),
    };

    let train_one = |parent_dim: usize, child_dim: usize, tag: u64| -> Result<ModelCheckpoint> {
        let priors = PriorConfig {
            parent_dim,
            child_dim,
            noise_dim: args.noise_dim,
        };
        let cfg = TrainConfig {
            steps: args.steps,
            batch_size: args.batch,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda_info: 1.0,
            seed: rng::mix(args.seed, rng::tag::TRAIN, tag),
            checkpoint_every: 0,
        };
        let outcome = hgan::train(&ds, &cfg, &priors, None)?;
        if let Some(abort) = outcome.aborted {
            return Err(CliError::Runtime(format!(
                "training (parent {parent_dim}, child {child_dim}) aborted at step {}",
                abort.step
            )));
        }
        Ok(outcome.checkpoint)
    };

    // One model per parent dimension (child fixed at the first setting) and
    // one per child dimension (parent fixed at the first setting).
    let base_child = args.child_dims[0];
    let base_parent = args.parent_dims[0];
    let mut fit_models = Vec::new();
    for (i, &p) in args.parent_dims.iter().enumerate() {
        fit_models.push((p, train_one(p, base_child, i as u64)?));
    }
    let mut uq_models = Vec::new();
    for (i, &c) in args.child_dims.iter().enumerate() {
        uq_models.push((c, train_one(base_parent, c, 1000 + i as u64)?));
    }

    let protocol = StudyProtocol {
        n_fit_targets: args.fit_targets,
        n_fab_ground_truth: args.fab_truth,
        n_fab_generated: args.fab_gen,
        n_nominals: args.nominals,
        fit: FitOpts {
            restarts: None,
            iters: 40,
            seed: args.seed,
        },
        seed: args.seed,
    };
    let fit_refs: Vec<(usize, &ModelCheckpoint)> =
        fit_models.iter().map(|(d, c)| (*d, c)).collect();
    let uq_refs: Vec<(usize, &ModelCheckpoint)> = uq_models.iter().map(|(d, c)| (*d, c)).collect();
    let report = duq_core::uq::parametric_study(&fit_refs, &uq_refs, &ds, &evaluator, &protocol)?;
    write_file(&args.out.join("study.csv"), &report.to_csv())?;
    write_config(&args.out, &args)?;
    println!("study -> {}", args.out.join("study.csv").display());
    Ok(())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    if out != args.run {
        prepare_out_dir(&out, args.force)?;
    }
    // Collect traces from the run directory.
    let mut traces: Vec<(String, BoTrace)> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.run)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", args.run.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "jsonl").unwrap_or(false))
        .collect();
    entries.sort();
    for path in entries {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
            );
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        let trace = BoTrace {
            dim: 0,
            seed: 0,
            budget: BoBudget {
                n_init: 0,
                n_seq: 0,
            },
            records,
            best_parent: None,
            best_value: None,
        };
        traces.push((label, trace));
    }
    if traces.is_empty() {
        return Err(CliError::Config(format!(
            "no .jsonl traces found in {}",
            args.run.display()
        )));
    }

    let series: Vec<(&str, &BoTrace)> = traces
        .iter()
        .map(|(label, trace)| (label.as_str(), trace))
        .collect();
    write_file(
        &out.join("convergence.svg"),
        &report::convergence_svg(&series, "optimization convergence"),
    )?;

    // Histogram of each run's incumbent Monte Carlo samples, when present.
    let mut sample_sets: Vec<(String, Vec<f64>)> = Vec::new();
    for (label, trace) in &traces {
        if let Some(best) = trace
            .records
            .iter()
            .filter(|r| r.objective.is_some() && !r.mc_values.is_empty())
            .max_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite"))
        {
            sample_sets.push((label.clone(), best.mc_values.clone()));
        }
    }
    if !sample_sets.is_empty() {
        let series: Vec<(&str, &[f64])> = sample_sets
            .iter()
            .map(|(l, v)| (l.as_str(), v.as_slice()))
            .collect();
        write_file(
            &out.join("performance_histogram.svg"),
            &report::histogram_svg(
                &series,
                "incumbent fabricated-performance samples",
                "objective",
            ),
        )?;
    }
    println!("plots -> {}", out.display());
    Ok(())
}

pub fn fixture_verify(args: FixtureVerifyArgs) -> Result<()> {
    // Re-derive the pinned proxy constants from the fixture geometry, then
    // the Monte Carlo orderings.
    let proxy = duq_core::objectives::AirfoilProxy::default();
    let frag = duq_core::objectives::airfoil_features(&fixture::fragile_airfoil());
    let rob = duq_core::objectives::airfoil_features(&fixture::robust_airfoil());
    println!("re-derived constants vs pinned:");
    println!(
        "  ridge_phase: fragile band {:.6} vs pinned {:.6}",
        frag.band, proxy.ridge_phase
    );
    println!(
        "  thick_opt:   robust thickness {:.6} vs pinned {:.6}",
        rob.thickness, proxy.thick_opt
    );
    let constants_ok =
        (frag.band - proxy.ridge_phase).abs() < 1e-4 && (rob.thickness - proxy.thick_opt).abs() < 1e-4;

    let report = fixture::verify(args.mc, args.seed)?;
    println!(
        "fixture Monte Carlo ({} draws, seed {}):",
        report.n_mc, args.seed
    );
    println!(
        "  nominal: fragile {:.4} vs robust {:.4}  (fragile must win)",
        report.nominal_fragile, report.nominal_robust
    );
    println!(
        "  5% quantile: fragile {:.4} vs robust {:.4}  (robust must win)",
        report.q05_fragile, report.q05_robust
    );
    if constants_ok && report.orderings_hold() {
        println!("fixture verified");
        Ok(())
    } else {
        Err(CliError::Runtime(
            "fixture claims do not hold under re-derivation".into(),
        ))
    }
}

pub fn recipe(args: RecipeArgs) -> Result<()> {
    let name: studies::RecipeName = args.name.parse()?;
    prepare_out_dir(&args.out, args.force)?;
    let rec = studies::recipe(name, args.seed);
    let report = studies::run_recipe(&rec, &args.out)?;
    println!(
        "recipe {} done: standard (nominal {:.4}, q{:.2} {:.4}) vs robust (nominal {:.4}, q{:.2} {:.4}) -> {}",
        report.name,
        report.standard.nominal_score,
        report.tau,
        report.standard.quantile_score,
        report.robust.nominal_score,
        report.tau,
        report.robust.quantile_score,
        args.out.display()
    );
    Ok(())
}
