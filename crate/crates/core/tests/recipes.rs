//! End-to-end recipe runs beyond the acceptance suite.

use duq_core::studies::{self, RecipeName};

/// Full metasurface pipeline at desk scale. Slower than the default test
/// budget (about a minute), so opt in with `--ignored`.
#[test]
#[ignore = "takes about a minute; run with --ignored"]
fn metasurface_small_recipe_completes() {
    let out = tempfile::tempdir().unwrap();
    let rec = studies::recipe(RecipeName::MetasurfaceSmall, 5);
    let report = studies::run_recipe(&rec, out.path()).expect("recipe completes");
    assert!(report.standard.nominal_score.is_finite());
    assert!(report.robust.quantile_score.is_finite());
    for file in [
        "dataset/manifest.json",
        "model.ckpt",
        "train_loss.csv",
        "study.csv",
        "opt_nominal.csv",
        "opt_quantile.csv",
        "performance_histogram.svg",
        "convergence.svg",
        "summary.json",
        "config.json",
    ] {
        assert!(out.path().join(file).exists(), "missing {file}");
    }
}
