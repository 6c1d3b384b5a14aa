//! The hierarchical GAN.
//!
//! One generator serves both branches: it maps `[parent || child || noise]`
//! to a design, and the nominal branch is literally the same code path with
//! the child code zeroed. The discriminator consumes a (nominal, fabricated)
//! pair jointly and predicts both the real/fake probability and, through
//! auxiliary heads sharing its trunk, the latent codes that produced a
//! generated pair (unit-variance Gaussian means).
//!
//! Training alternates one discriminator step and one generator step. The
//! discriminator step updates the trunk and decision head on the pair-GAN
//! loss; the generator step updates the generator and the auxiliary heads on
//! the non-saturating adversarial loss plus the weighted code log-likelihood.

mod checkpoint_io;
mod loss;
mod nets;
mod train;

pub use loss::{gaussian_code_log_density, hgan_loss, GeneratedBatchStats, RealBatchStats};
pub use train::{train, AbortDiagnostic, LossRecord, TrainConfig, TrainResult};

use crate::dataset::{Design, DesignKind, Normalization};
use crate::{CoreError, Result};
use duq_autodiff::{Graph, ParamSet, Tensor};
use nets::{DiscArch, GenArch};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Fixed prior covariance scale for child and noise codes: `N(0, 0.5 I)`.
pub const CODE_VARIANCE: f64 = 0.5;

/// Latent space dimensions and priors. The parent code is uniform on
/// `[0,1]^parent_dim` (so optimization searches a box); child and noise are
/// Gaussian with covariance [`CODE_VARIANCE`] * I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub parent_dim: usize,
    pub child_dim: usize,
    pub noise_dim: usize,
}

impl PriorConfig {
    /// Full-scale airfoil dimensions: parent 7, child 5, noise 10.
    pub fn airfoil_paper() -> Self {
        Self {
            parent_dim: 7,
            child_dim: 5,
            noise_dim: 10,
        }
    }

    /// Full-scale metasurface dimensions: parent 5, child 10, noise 10.
    pub fn metasurface_paper() -> Self {
        Self {
            parent_dim: 5,
            child_dim: 10,
            noise_dim: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parent_dim == 0 || self.child_dim == 0 || self.noise_dim == 0 {
            return Err(CoreError::Validation(
                "latent dimensions must all be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.parent_dim + self.child_dim + self.noise_dim
    }

    pub fn code_std(&self) -> f64 {
        CODE_VARIANCE.sqrt()
    }

    pub fn sample_parent(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.parent_dim).map(|_| rng.random::<f64>()).collect()
    }

    pub fn sample_child(&self, rng: &mut impl Rng) -> Vec<f64> {
        let std = self.code_std();
        (0..self.child_dim)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }

    pub fn sample_noise(&self, rng: &mut impl Rng) -> Vec<f64> {
        let std = self.code_std();
        (0..self.noise_dim)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }
}

/// One generator input triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub parent: Vec<f64>,
    pub child: Vec<f64>,
    pub noise: Vec<f64>,
}

impl LatentSample {
    /// The nominal branch: zero child code, zero noise.
    pub fn nominal(parent: Vec<f64>, child_dim: usize, noise_dim: usize) -> Self {
        Self {
            parent,
            child: vec![0.0; child_dim],
            noise: vec![0.0; noise_dim],
        }
    }

    fn validate(&self, priors: &PriorConfig) -> Result<()> {
        let check = |what: &'static str, got: usize, expected: usize| {
            if got != expected {
                Err(CoreError::DimMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("parent code", self.parent.len(), priors.parent_dim)?;
        check("child code", self.child.len(), priors.child_dim)?;
        check("noise", self.noise.len(), priors.noise_dim)
    }
}

/// Auxiliary-head output: diagonal Gaussian parameters for the parent and
/// child codes. Variances are fixed to one, so the log-variances are zero
/// vectors, kept explicit for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub parent_mean: Vec<f64>,
    pub parent_log_var: Vec<f64>,
    pub child_mean: Vec<f64>,
    pub child_log_var: Vec<f64>,
}

impl QParams {
    /// Log-density of codes under this diagonal unit-variance Gaussian.
    pub fn log_density(&self, parent: &[f64], child: &[f64]) -> f64 {
        gaussian_code_log_density(&self.parent_mean, parent)
            + gaussian_code_log_density(&self.child_mean, child)
    }
}

/// A trained (or initialized) model snapshot: all parameters plus the
/// configuration needed to rebuild the wiring and map designs in and out of
/// normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: DesignKind,
    pub priors: PriorConfig,
    pub train_config: TrainConfig,
    pub step: u64,
    pub loss_history: Vec<LossRecord>,
    pub normalization: Normalization,
    pub(crate) init_seed: u64,
    pub(crate) gen_params: ParamSet,
    pub(crate) disc_params: ParamSet,
    pub(crate) q_params: ParamSet,
    pub(crate) gen_arch: GenArch,
    pub(crate) disc_arch: DiscArch,
}

impl ModelCheckpoint {
    /// A freshly initialized model.
    pub fn init(
        kind: DesignKind,
        priors: PriorConfig,
        train_config: TrainConfig,
        normalization: Normalization,
    ) -> Result<Self> {
        priors.validate()?;
        let init_seed = train_config.seed;
        let mut gen_params = ParamSet::new();
        let mut disc_params = ParamSet::new();
        let mut q_params = ParamSet::new();
        let mut rng_g = crate::rng::stream(init_seed, crate::rng::tag::INIT_G, 0);
        let mut rng_d = crate::rng::stream(init_seed, crate::rng::tag::INIT_D, 0);
        let gen_arch = GenArch::build(kind, &priors, &mut gen_params, &mut rng_g);
        let disc_arch = DiscArch::build(kind, &priors, &mut disc_params, &mut q_params, &mut rng_d);
        Ok(Self {
            kind,
            priors,
            train_config,
            step: 0,
            loss_history: Vec::new(),
            normalization,
            init_seed,
            gen_params,
            disc_params,
            q_params,
            gen_arch,
            disc_arch,
        })
    }

    /// Generator forward pass in normalized design space. The nominal branch
    /// is this same path with `sample.child == 0`.
    pub fn generate_normalized(&self, sample: &LatentSample) -> Result<Vec<f64>> {
        sample.validate(&self.priors)?;
        let mut graph = Graph::new();
        let leaves = self.gen_params.leaves(&mut graph, false);
        let input: Vec<f64> = sample
            .parent
            .iter()
            .chain(&sample.child)
            .chain(&sample.noise)
            .copied()
            .collect();
        let x = graph.constant(Tensor::matrix(1, input.len(), input)?);
        let out = self.gen_arch.forward(&mut graph, &leaves, x)?;
        Ok(graph.value(out).data().to_vec())
    }

    /// Generator forward pass, denormalized into a concrete [`Design`].
    pub fn generate(&self, sample: &LatentSample) -> Result<Design> {
        let norm = self.generate_normalized(sample)?;
        let flat = self.normalization.denormalize(self.kind, &norm);
        Design::from_flat(self.kind, &flat)
    }

    /// Discriminator forward pass on a normalized (nominal, fabricated)
    /// pair: real/fake probability plus auxiliary code distributions.
    pub fn discriminate(&self, x_nom: &[f64], x_fab: &[f64]) -> Result<(f64, QParams)> {
        let dim = self.kind.dim();
        for (what, got) in [("nominal design", x_nom.len()), ("fabricated design", x_fab.len())] {
            if got != dim {
                return Err(CoreError::DimMismatch {
                    what,
                    expected: dim,
                    got,
                });
            }
        }
        let mut graph = Graph::new();
        let d_leaves = self.disc_params.leaves(&mut graph, false);
        let q_leaves = self.q_params.leaves(&mut graph, false);
        let nom = graph.constant(Tensor::matrix(1, dim, x_nom.to_vec())?);
        let fab = graph.constant(Tensor::matrix(1, dim, x_fab.to_vec())?);
        let out = self
            .disc_arch
            .forward(&mut graph, &d_leaves, Some(&q_leaves), nom, fab)?;
        let d = graph.sigmoid(out.logit);
        let prob = graph.value(d).data()[0];
        let q = QParams {
            parent_mean: graph.value(out.q_parent.expect("q heads wired")).data().to_vec(),
            parent_log_var: vec![0.0; self.priors.parent_dim],
            child_mean: graph.value(out.q_child.expect("q heads wired")).data().to_vec(),
            child_log_var: vec![0.0; self.priors.child_dim],
        };
        Ok((prob, q))
    }

    /// Squared distance `|G(parent, 0, 0) - target|^2` in normalized space
    /// and its gradient with respect to the parent code. Used by the fitting
    /// test's bounded local search.
    pub fn nominal_distance_sq_grad(
        &self,
        parent: &[f64],
        target_flat: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if parent.len() != self.priors.parent_dim {
            return Err(CoreError::DimMismatch {
                what: "parent code",
                expected: self.priors.parent_dim,
                got: parent.len(),
            });
        }
        if target_flat.len() != self.kind.dim() {
            return Err(CoreError::DimMismatch {
                what: "fit target",
                expected: self.kind.dim(),
                got: target_flat.len(),
            });
        }
        let mut graph = Graph::new();
        let leaves = self.gen_params.leaves(&mut graph, false);
        let p = graph.leaf(Tensor::matrix(1, parent.len(), parent.to_vec())?, true);
        let rest = graph.constant(Tensor::matrix(
            1,
            self.priors.child_dim + self.priors.noise_dim,
            vec![0.0; self.priors.child_dim + self.priors.noise_dim],
        )?);
        let x = graph.concat(&[p, rest], 1)?;
        let out = self.gen_arch.forward(&mut graph, &leaves, x)?;
        let target = graph.constant(Tensor::matrix(1, target_flat.len(), target_flat.to_vec())?);
        let diff = graph.sub(out, target)?;
        let sq = graph.mul(diff, diff)?;
        let loss = graph.sum(sq, None)?;
        let value = graph.value(loss).item()?;
        let grads = graph.backward(loss)?;
        let grad = grads
            .get(p)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; parent.len()]);
        Ok((value, grad))
    }

    /// Number of scalar parameters across all groups.
    pub fn num_parameters(&self) -> usize {
        self.gen_params.num_scalars() + self.disc_params.num_scalars() + self.q_params.num_scalars()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Normalization;

    fn tiny_checkpoint(kind: DesignKind) -> ModelCheckpoint {
        let priors = PriorConfig {
            parent_dim: 3,
            child_dim: 2,
            noise_dim: 4,
        };
        let channels = match kind {
            DesignKind::Airfoil => vec![(0.0, 1.0), (-0.2, 0.2)],
            DesignKind::Metasurface => vec![(-20.0, 5.0)],
        };
        ModelCheckpoint::init(
            kind,
            priors,
            TrainConfig::smoke(11),
            Normalization { channels },
        )
        .unwrap()
    }

    #[test]
    fn generate_output_shapes() {
        for kind in [DesignKind::Airfoil, DesignKind::Metasurface] {
            let ckpt = tiny_checkpoint(kind);
            let sample = LatentSample::nominal(vec![0.5, 0.2, 0.8], 2, 4);
            let out = ckpt.generate_normalized(&sample).unwrap();
            assert_eq!(out.len(), kind.dim());
            assert!(out.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let ckpt = tiny_checkpoint(DesignKind::Airfoil);
        let sample = LatentSample {
            parent: vec![0.1, 0.9, 0.4],
            child: vec![0.3, -0.2],
            noise: vec![0.05; 4],
        };
        let a = ckpt.generate_normalized(&sample).unwrap();
        let b = ckpt.generate_normalized(&sample).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn generate_rejects_dim_mismatch() {
        let ckpt = tiny_checkpoint(DesignKind::Airfoil);
        let sample = LatentSample {
            parent: vec![0.5; 2],
            child: vec![0.0; 2],
            noise: vec![0.0; 4],
        };
        assert!(matches!(
            ckpt.generate_normalized(&sample),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn discriminate_outputs_probability() {
        for kind in [DesignKind::Airfoil, DesignKind::Metasurface] {
            let ckpt = tiny_checkpoint(kind);
            let dim = kind.dim();
            let x_nom = vec![0.1; dim];
            let x_fab = vec![-0.1; dim];
            let (d, q) = ckpt.discriminate(&x_nom, &x_fab).unwrap();
            assert!(d.is_finite() && d > 0.0 && d < 1.0);
            assert_eq!(q.parent_mean.len(), 3);
            assert_eq!(q.child_mean.len(), 2);
            assert!(q.parent_log_var.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn discriminate_is_positional() {
        let ckpt = tiny_checkpoint(DesignKind::Airfoil);
        let dim = DesignKind::Airfoil.dim();
        let a = vec![0.3; dim];
        let b = vec![-0.3; dim];
        let (d_ab, _) = ckpt.discriminate(&a, &b).unwrap();
        let (d_ba, _) = ckpt.discriminate(&b, &a).unwrap();
        assert_ne!(d_ab, d_ba);
    }

    #[test]
    fn q_log_density_at_mean_is_normalizing_constant() {
        let q = QParams {
            parent_mean: vec![0.7, -0.3],
            parent_log_var: vec![0.0; 2],
            child_mean: vec![0.1],
            child_log_var: vec![0.0],
        };
        let expect = -0.5 * 3.0 * (2.0 * std::f64::consts::PI).ln();
        let got = q.log_density(&[0.7, -0.3], &[0.1]);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn prior_samples_match_config() {
        let priors = PriorConfig::airfoil_paper();
        let mut rng = crate::rng::seeded(4);
        let p = priors.sample_parent(&mut rng);
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|&v| (0.0..1.0).contains(&v)));
        assert_eq!(priors.sample_child(&mut rng).len(), 5);
        assert_eq!(priors.sample_noise(&mut rng).len(), 10);
    }

    #[test]
    fn child_and_noise_prior_variance_near_half() {
        let priors = PriorConfig::airfoil_paper();
        let mut rng = crate::rng::seeded(100);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for _ in 0..n / priors.child_dim {
            for v in priors.sample_child(&mut rng) {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        assert!((var - CODE_VARIANCE).abs() < 0.05 * CODE_VARIANCE, "var {var}");
        assert!(mean.abs() < 0.02);
    }
}
