//! `duq`: synthesize datasets, train the hierarchical GAN, quantify
//! uncertainty, optimize designs, and render reports.
//!
//! Every command writes its resolved configuration as `config.json` next to
//! its outputs, refuses to write into a non-empty directory without
//! `--force`, and is reproducible bit-for-bit from the same configuration.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.

mod commands;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "duq", version, about = "Generative design under fabrication uncertainty")]
struct Cli {
    /// Global cap on worker processes (applies to external-command
    /// evaluators; built-in evaluators are single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a nominal/fabricated design dataset.
    Synth(SynthArgs),
    /// Train the hierarchical GAN on a dataset directory.
    Train(TrainArgs),
    /// Quantile and Wasserstein reports for a trained model.
    Uq(UqArgs),
    /// Bayesian design optimization over the parent latent space.
    Optimize(OptimizeArgs),
    /// Parametric study over latent dimensions (trains one model per
    /// setting).
    Study(StudyArgs),
    /// Render SVG plots from a run directory.
    Plot(PlotArgs),
    /// Re-derive the shipped fragile/robust fixture claims by Monte Carlo.
    FixtureVerify(FixtureVerifyArgs),
    /// Run a named end-to-end recipe.
    Recipe(RecipeArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Design family: `airfoil` or `metasurface`.
    #[arg(long)]
    kind: String,
    /// Number of nominal designs.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Fabrications per nominal design.
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Control-point noise std (chord units for airfoils, pixels for
    /// metasurfaces). Defaults per kind: 0.02 / 1.0.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Smoothing Gaussian std in pixels (metasurface only; default 2).
    #[arg(long)]
    filter_std: Option<f64>,
    /// Directory of airfoil coordinate files (.dat) to use instead of the
    /// built-in synthetic family.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Learning rate for both generator and discriminator.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Weight of the code log-likelihood term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 4)]
    parent_dim: usize,
    #[arg(long, default_value_t = 3)]
    child_dim: usize,
    #[arg(long, default_value_t = 10)]
    noise_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit an intermediate checkpoint every this many steps (0 = never).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct UqArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (supplies the ground-truth fabrication process).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Monte Carlo fabrications per nominal.
    #[arg(long, default_value_t = 25)]
    mc: usize,
    /// Number of sampled nominal designs to report on.
    #[arg(long, default_value_t = 5)]
    nominals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct OptimizeArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Objective mode: `nominal`, `quantile`, `mean-std`, or `reliability`.
    #[arg(long, default_value = "quantile")]
    mode: String,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Std weight for mean-std mode.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Performance threshold for reliability mode.
    #[arg(long, default_value_t = 0.0)]
    c_star: f64,
    /// Maximum acceptable failure probability for reliability mode.
    #[arg(long, default_value_t = 0.1)]
    alpha_star: f64,
    /// Monte Carlo samples per evaluation (risk-adjusted modes).
    #[arg(long, default_value_t = 25)]
    mc: usize,
    /// Latin hypercube initialization size.
    #[arg(long, default_value_t = 8)]
    init: usize,
    /// Sequential (surrogate-guided) evaluations.
    #[arg(long, default_value_t = 12)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reuse one Monte Carlo seed across evaluations (common random
    /// numbers).
    #[arg(long, default_value_t = false)]
    crn: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct StudyArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Parent latent dimensions for the fitting study, e.g. `2,4,7`.
    #[arg(long, default_value = "2,4", value_delimiter = ',')]
    parent_dims: Vec<usize>,
    /// Child latent dimensions for the Wasserstein study, e.g. `3,5`.
    #[arg(long, default_value = "3", value_delimiter = ',')]
    child_dims: Vec<usize>,
    /// Training steps per model.
    #[arg(long, default_value_t = 300)]
    steps: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    noise_dim: usize,
    /// Fitting-test targets per parent dimension.
    #[arg(long, default_value_t = 10)]
    fit_targets: usize,
    /// Ground-truth fabrications per generated nominal.
    #[arg(long, default_value_t = 10)]
    fab_truth: usize,
    /// Generator fabrications per generated nominal.
    #[arg(long, default_value_t = 10)]
    fab_gen: usize,
    /// Generated nominals per child dimension.
    #[arg(long, default_value_t = 3)]
    nominals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct PlotArgs {
    /// Run directory holding optimization traces (`*.jsonl`).
    #[arg(long)]
    run: PathBuf,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct FixtureVerifyArgs {
    /// Monte Carlo fabrication draws per fixture design.
    #[arg(long, default_value_t = 10_000)]
    mc: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct RecipeArgs {
    /// One of `airfoil_small`, `airfoil_paper`, `metasurface_small`,
    /// `metasurface_paper`.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

/// Errors split by exit code.
#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<duq_core::CoreError> for CliError {
    fn from(e: duq_core::CoreError) -> Self {
        use duq_core::CoreError as E;
        match e {
            E::Validation(_) | E::Config(_) | E::DimMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        std::process::exit(2);
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Uq(args) => commands::uq(args),
        Command::Optimize(args) => commands::optimize(args),
        Command::Study(args) => commands::study(args),
        Command::Plot(args) => commands::plot(args),
        Command::FixtureVerify(args) => commands::fixture_verify(args),
        Command::Recipe(args) => commands::recipe(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(3);
        }
    }
}
