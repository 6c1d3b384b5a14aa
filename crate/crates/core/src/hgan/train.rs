//! The alternating training loop: one discriminator step, one generator
//! step per iteration, Adam on both, everything derived from one seed.

use super::loss::{
    graph_mean_code_log_density, graph_neg_mean_log_one_minus_prob, graph_neg_mean_log_prob,
};
use super::{ModelCheckpoint, PriorConfig};
use crate::dataset::DesignDataset;
use crate::{rng, CoreError, Result};
use duq_autodiff::{AdamState, Gradients, Graph, ParamSet, Tensor, Value};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_info: f64,
    pub seed: u64,
    /// Emit a checkpoint snapshot every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Full-scale airfoil protocol: 20,000 steps, batch 32, both
    /// learning rates 0.0001.
    pub fn airfoil_paper(seed: u64) -> Self {
        Self {
            steps: 20_000,
            batch_size: 32,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda_info: 1.0,
            seed,
            checkpoint_every: 5_000,
        }
    }

    /// Full-scale metasurface protocol: 50,000 steps, batch 32, both
    /// learning rates 0.0001.
    pub fn metasurface_paper(seed: u64) -> Self {
        Self {
            steps: 50_000,
            ..Self::airfoil_paper(seed)
        }
    }

    /// Desk-scale smoke protocol.
    pub fn smoke(seed: u64) -> Self {
        Self {
            steps: 500,
            batch_size: 32,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda_info: 1.0,
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Validation("batch_size must be positive".into()));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return Err(CoreError::Validation(
                "learning rates must be positive".into(),
            ));
        }
        if self.lambda_info < 0.0 {
            return Err(CoreError::Validation(
                "lambda_info must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
}

/// Diagnostic attached when training aborts on a non-finite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortDiagnostic {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
}

/// Training output: the final (or last-good) checkpoint, plus the abort
/// diagnostic if a loss went non-finite.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: ModelCheckpoint,
    pub aborted: Option<AbortDiagnostic>,
}

/// Callback invoked with periodic snapshots during training.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(&ModelCheckpoint) -> Result<()>;

fn grads_to_vec(params: &ParamSet, leaves: &[Value], grads: &mut Gradients) -> Vec<Option<Tensor>> {
    params
        .ids()
        .map(|id| grads.take(leaves[id.index()]))
        .collect()
}

fn sample_real_batch(
    dataset: &DesignDataset,
    batch: usize,
    rng: &mut ChaCha12Rng,
) -> (Tensor, Tensor) {
    let d = dataset.dim();
    let mut nom = Vec::with_capacity(batch * d);
    let mut fab = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        let (i, j) = dataset.sample_pair_indices(rng);
        nom.extend_from_slice(&dataset.normalize(dataset.nominal_flat(i)));
        fab.extend_from_slice(&dataset.normalize(dataset.fabricated_flat(i, j)));
    }
    (
        Tensor::matrix(batch, d, nom).expect("batch shape"),
        Tensor::matrix(batch, d, fab).expect("batch shape"),
    )
}

fn sample_latent_batch(
    priors: &PriorConfig,
    batch: usize,
    rng: &mut ChaCha12Rng,
) -> (Tensor, Tensor, Tensor) {
    let mut parent = Vec::with_capacity(batch * priors.parent_dim);
    let mut child = Vec::with_capacity(batch * priors.child_dim);
    let mut noise = Vec::with_capacity(batch * priors.noise_dim);
    for _ in 0..batch {
        parent.extend(priors.sample_parent(rng));
        child.extend(priors.sample_child(rng));
        noise.extend(priors.sample_noise(rng));
    }
    (
        Tensor::matrix(batch, priors.parent_dim, parent).expect("latent shape"),
        Tensor::matrix(batch, priors.child_dim, child).expect("latent shape"),
        Tensor::matrix(batch, priors.noise_dim, noise).expect("latent shape"),
    )
}

/// Runs both generator branches over a latent batch; `trainable` controls
/// whether generator parameters collect gradients. Returns the graph, the
/// generator leaves, and the (nominal, fabricated) outputs.
fn generator_pair(
    ckpt: &ModelCheckpoint,
    graph: &mut Graph,
    parent: &Tensor,
    child: &Tensor,
    noise: &Tensor,
    trainable: bool,
) -> Result<(Vec<Value>, Value, Value)> {
    let batch = parent.shape()[0];
    let leaves = ckpt.gen_params.leaves(graph, trainable);
    let p = graph.constant(parent.clone());
    let c = graph.constant(child.clone());
    let z = graph.constant(noise.clone());
    let zero_child = graph.constant(Tensor::zeros(vec![batch, ckpt.priors.child_dim]));
    let nominal_in = graph.concat(&[p, zero_child, z], 1)?;
    let fab_in = graph.concat(&[p, c, z], 1)?;
    let nominal = ckpt.gen_arch.forward(graph, &leaves, nominal_in)?;
    let fab = ckpt.gen_arch.forward(graph, &leaves, fab_in)?;
    Ok((leaves, nominal, fab))
}

/// Trains a fresh model on the dataset. Alternates one discriminator step
/// and one generator step; deterministic under the config seed. A non-finite
/// loss aborts with the last checkpoint and a diagnostic instead of applying
/// the bad update.
pub fn train(
    dataset: &DesignDataset,
    cfg: &TrainConfig,
    priors: &PriorConfig,
    mut on_checkpoint: Option<CheckpointSink<'_>>,
) -> Result<TrainResult> {
    cfg.validate()?;
    priors.validate()?;
    let mut ckpt = ModelCheckpoint::init(
        dataset.kind(),
        *priors,
        *cfg,
        dataset.normalization().clone(),
    )?;
    let mut adam_g = AdamState::new(cfg.lr_g, &ckpt.gen_params);
    let mut adam_d = AdamState::new(cfg.lr_d, &ckpt.disc_params);
    let mut adam_q = AdamState::new(cfg.lr_g, &ckpt.q_params);
    let mut history: Vec<LossRecord> = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let mut batch_rng = rng::stream(cfg.seed, rng::tag::BATCH, step);
        let (real_nom, real_fab) = sample_real_batch(dataset, cfg.batch_size, &mut batch_rng);

        // -- discriminator step ------------------------------------------------
        let mut lat_rng = rng::stream(cfg.seed, rng::tag::LATENT, 2 * step);
        let (parent, child, noise) = sample_latent_batch(priors, cfg.batch_size, &mut lat_rng);
        let (fake_nom, fake_fab) = {
            let mut graph = Graph::new();
            let (_, nominal, fab) =
                generator_pair(&ckpt, &mut graph, &parent, &child, &noise, false)?;
            (graph.value(nominal).clone(), graph.value(fab).clone())
        };

        let loss_d = {
            let mut graph = Graph::new();
            let d_leaves = ckpt.disc_params.leaves(&mut graph, true);
            let rn = graph.constant(real_nom.clone());
            let rf = graph.constant(real_fab.clone());
            let fnom = graph.constant(fake_nom);
            let ffab = graph.constant(fake_fab);
            let real_out = ckpt.disc_arch.forward(&mut graph, &d_leaves, None, rn, rf)?;
            let fake_out = ckpt
                .disc_arch
                .forward(&mut graph, &d_leaves, None, fnom, ffab)?;
            let term_real = graph_neg_mean_log_prob(&mut graph, real_out.logit)?;
            let term_fake = graph_neg_mean_log_one_minus_prob(&mut graph, fake_out.logit)?;
            let loss = graph.add(term_real, term_fake)?;
            let loss_value = graph.value(loss).item()?;
            if loss_value.is_finite() {
                let mut grads = graph.backward(loss)?;
                let d_grads = grads_to_vec(&ckpt.disc_params, &d_leaves, &mut grads);
                adam_d.step(&mut ckpt.disc_params, &d_grads)?;
            }
            loss_value
        };
        if !loss_d.is_finite() {
            history.push(LossRecord {
                step,
                loss_d,
                loss_g: f64::NAN,
            });
            return Ok(abort(ckpt, history, step, loss_d, f64::NAN));
        }

        // -- generator / auxiliary step ----------------------------------------
        let mut lat_rng = rng::stream(cfg.seed, rng::tag::LATENT, 2 * step + 1);
        let (parent, child, noise) = sample_latent_batch(priors, cfg.batch_size, &mut lat_rng);
        let loss_g = {
            let mut graph = Graph::new();
            let (_gen_leaves, nominal, fab) =
                generator_pair(&ckpt, &mut graph, &parent, &child, &noise, true)?;
            let gen_leaves = _gen_leaves;
            let d_leaves = ckpt.disc_params.leaves(&mut graph, false);
            let q_leaves = ckpt.q_params.leaves(&mut graph, true);
            let out = ckpt
                .disc_arch
                .forward(&mut graph, &d_leaves, Some(&q_leaves), nominal, fab)?;
            let adv = graph_neg_mean_log_prob(&mut graph, out.logit)?;
            let cp = graph.constant(parent.clone());
            let cc = graph.constant(child.clone());
            let info = graph_mean_code_log_density(
                &mut graph,
                out.q_parent.expect("q heads wired"),
                out.q_child.expect("q heads wired"),
                cp,
                cc,
            )?;
            let weighted = graph.scale(info, -cfg.lambda_info);
            let loss = graph.add(adv, weighted)?;
            let loss_value = graph.value(loss).item()?;
            if loss_value.is_finite() {
                let mut grads = graph.backward(loss)?;
                let g_grads = grads_to_vec(&ckpt.gen_params, &gen_leaves, &mut grads);
                let q_grads = grads_to_vec(&ckpt.q_params, &q_leaves, &mut grads);
                adam_g.step(&mut ckpt.gen_params, &g_grads)?;
                adam_q.step(&mut ckpt.q_params, &q_grads)?;
            }
            loss_value
        };
        if !loss_g.is_finite() {
            history.push(LossRecord {
                step,
                loss_d,
                loss_g,
            });
            return Ok(abort(ckpt, history, step, loss_d, loss_g));
        }

        history.push(LossRecord {
            step,
            loss_d,
            loss_g,
        });

        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(cb) = on_checkpoint.as_deref_mut() {
                let mut snapshot = ckpt.clone();
                snapshot.step = step + 1;
                snapshot.loss_history = history.clone();
                cb(&snapshot)?;
            }
        }
    }

    ckpt.step = cfg.steps;
    ckpt.loss_history = history;
    Ok(TrainResult {
        checkpoint: ckpt,
        aborted: None,
    })
}

fn abort(
    mut ckpt: ModelCheckpoint,
    history: Vec<LossRecord>,
    step: u64,
    loss_d: f64,
    loss_g: f64,
) -> TrainResult {
    ckpt.step = step;
    ckpt.loss_history = history;
    TrainResult {
        checkpoint: ckpt,
        aborted: Some(AbortDiagnostic {
            step,
            loss_d,
            loss_g,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, AirfoilSource, BuildConfig, DesignKind};
    use crate::geometry::PerturbationConfig;

    fn tiny_dataset(kind: DesignKind) -> DesignDataset {
        build_dataset(&BuildConfig {
            kind,
            n_nominal: 12,
            m_fabricated: 2,
            perturbation: match kind {
                DesignKind::Airfoil => PerturbationConfig::airfoil_default(3),
                DesignKind::Metasurface => PerturbationConfig::metasurface_default(3),
            },
            airfoil_source: AirfoilSource::Synthetic,
            master_seed: 3,
        })
        .unwrap()
    }

    fn tiny_priors() -> PriorConfig {
        PriorConfig {
            parent_dim: 3,
            child_dim: 2,
            noise_dim: 4,
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let ds = tiny_dataset(DesignKind::Airfoil);
        let mut cfg = TrainConfig::smoke(9);
        cfg.steps = 0;
        let result = train(&ds, &cfg, &tiny_priors(), None).unwrap();
        let fresh = ModelCheckpoint::init(
            DesignKind::Airfoil,
            tiny_priors(),
            cfg,
            ds.normalization().clone(),
        )
        .unwrap();
        assert_eq!(result.checkpoint, fresh);
        assert!(result.aborted.is_none());
    }

    #[test]
    fn short_airfoil_training_is_finite_and_deterministic() {
        let ds = tiny_dataset(DesignKind::Airfoil);
        let mut cfg = TrainConfig::smoke(5);
        cfg.steps = 25;
        cfg.batch_size = 8;
        let a = train(&ds, &cfg, &tiny_priors(), None).unwrap();
        assert!(a.aborted.is_none());
        assert_eq!(a.checkpoint.loss_history.len(), 25);
        assert!(a
            .checkpoint
            .loss_history
            .iter()
            .all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
        let b = train(&ds, &cfg, &tiny_priors(), None).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn short_metasurface_training_is_finite() {
        let ds = tiny_dataset(DesignKind::Metasurface);
        let mut cfg = TrainConfig::smoke(6);
        cfg.steps = 4;
        cfg.batch_size = 4;
        let result = train(&ds, &cfg, &tiny_priors(), None).unwrap();
        assert!(result.aborted.is_none());
        assert!(result
            .checkpoint
            .loss_history
            .iter()
            .all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
    }

    #[test]
    fn training_nominal_branch_is_generate_with_zero_child() {
        // One code path: the nominal half of the training pair must be
        // bitwise identical to `generate_normalized` with a zeroed child.
        let ds = tiny_dataset(DesignKind::Airfoil);
        let ckpt = ModelCheckpoint::init(
            DesignKind::Airfoil,
            tiny_priors(),
            TrainConfig::smoke(3),
            ds.normalization().clone(),
        )
        .unwrap();
        let priors = tiny_priors();
        let mut lat_rng = rng::stream(3, rng::tag::LATENT, 0);
        let (parent, child, noise) = sample_latent_batch(&priors, 1, &mut lat_rng);
        let mut graph = Graph::new();
        let (_, nominal, _) =
            generator_pair(&ckpt, &mut graph, &parent, &child, &noise, false).unwrap();
        let from_training = graph.value(nominal).data().to_vec();

        let sample = crate::hgan::LatentSample {
            parent: parent.data().to_vec(),
            child: vec![0.0; priors.child_dim],
            noise: noise.data().to_vec(),
        };
        let from_generate = ckpt.generate_normalized(&sample).unwrap();
        assert!(from_training
            .iter()
            .zip(&from_generate)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_callback_fires() {
        let ds = tiny_dataset(DesignKind::Airfoil);
        let mut cfg = TrainConfig::smoke(5);
        cfg.steps = 10;
        cfg.batch_size = 4;
        cfg.checkpoint_every = 4;
        let mut seen = Vec::new();
        let mut cb = |c: &ModelCheckpoint| {
            seen.push(c.step);
            Ok(())
        };
        train(&ds, &cfg, &tiny_priors(), Some(&mut cb)).unwrap();
        assert_eq!(seen, vec![4, 8]);
    }

    #[test]
    fn generator_step_moves_downhill_on_fixed_batch() {
        // Descent-direction sanity: the inner product of the generator-loss
        // gradient with the applied update must be negative (Adam's first
        // step is a signed, scaled gradient).
        let ds = tiny_dataset(DesignKind::Airfoil);
        let cfg = TrainConfig::smoke(13);
        let priors = tiny_priors();
        let before = ModelCheckpoint::init(
            DesignKind::Airfoil,
            priors,
            cfg,
            ds.normalization().clone(),
        )
        .unwrap();

        let mut cfg_one = cfg;
        cfg_one.steps = 1;
        let after = train(&ds, &cfg_one, &priors, None).unwrap().checkpoint;

        // Recompute the generator gradient on the same fixed batch the step
        // used (seeded stream 2*0+1), against the *initial* parameters.
        let mut lat_rng = rng::stream(cfg.seed, rng::tag::LATENT, 1);
        let (parent, child, noise) = sample_latent_batch(&priors, cfg.batch_size, &mut lat_rng);
        let mut graph = Graph::new();
        let (gen_leaves, nominal, fab) =
            generator_pair(&before, &mut graph, &parent, &child, &noise, true).unwrap();
        let d_leaves = before.disc_params.leaves(&mut graph, false);
        let q_leaves = before.q_params.leaves(&mut graph, false);
        let out = before
            .disc_arch
            .forward(&mut graph, &d_leaves, Some(&q_leaves), nominal, fab)
            .unwrap();
        let adv = graph_neg_mean_log_prob(&mut graph, out.logit).unwrap();
        let cp = graph.constant(parent.clone());
        let cc = graph.constant(child.clone());
        let info = graph_mean_code_log_density(
            &mut graph,
            out.q_parent.unwrap(),
            out.q_child.unwrap(),
            cp,
            cc,
        )
        .unwrap();
        let weighted = graph.scale(info, -cfg.lambda_info);
        let loss = graph.add(adv, weighted).unwrap();
        let mut grads = graph.backward(loss).unwrap();

        // Note: the discriminator step runs first, so `after`'s generator
        // update was computed against the post-D-step discriminator, not
        // `before`'s. The inner-product check is still valid because the
        // update direction is whatever Adam applied; we only need the
        // gradient from the same (batch, parameters) pair that produced it.
        // Recompute against the post-D-step discriminator:
        let mut mid = before.clone();
        // `after`'s discriminator is exactly the post-D-step state (the G
        // step does not touch it), so reuse it directly.
        mid.disc_params = after.disc_params.clone();
        let mut graph2 = Graph::new();
        let (gen_leaves2, nominal2, fab2) =
            generator_pair(&mid, &mut graph2, &parent, &child, &noise, true).unwrap();
        let d_leaves2 = mid.disc_params.leaves(&mut graph2, false);
        let q_leaves2 = mid.q_params.leaves(&mut graph2, false);
        let out2 = mid
            .disc_arch
            .forward(&mut graph2, &d_leaves2, Some(&q_leaves2), nominal2, fab2)
            .unwrap();
        let adv2 = graph_neg_mean_log_prob(&mut graph2, out2.logit).unwrap();
        let cp2 = graph2.constant(parent);
        let cc2 = graph2.constant(child);
        let info2 = graph_mean_code_log_density(
            &mut graph2,
            out2.q_parent.unwrap(),
            out2.q_child.unwrap(),
            cp2,
            cc2,
        )
        .unwrap();
        let weighted2 = graph2.scale(info2, -cfg.lambda_info);
        let loss2 = graph2.add(adv2, weighted2).unwrap();
        let mut grads2 = graph2.backward(loss2).unwrap();

        let mut inner = 0.0;
        for id in before.gen_params.ids() {
            let g = grads2
                .take(gen_leaves2[id.index()])
                .expect("gradient present");
            let p0 = before.gen_params.get(id).data();
            let p1 = after.gen_params.get(id).data();
            for ((g, a), b) in g.data().iter().zip(p1).zip(p0) {
                inner += g * (a - b);
            }
        }
        let _ = (gen_leaves, &mut grads);
        assert!(inner < 1e-9, "update is not a descent direction: {inner}");
    }
}
