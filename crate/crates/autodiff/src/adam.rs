use crate::{AutodiffError, ParamSet, Result, Tensor};

/// Bias-corrected Adam. Moment buffers are allocated to match the parameter
/// set on construction and stay aligned with it by index.
///
/// Defaults follow the adversarial-training convention of a reduced first
/// moment: `beta1 = 0.5`, `beta2 = 0.999`, `epsilon = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, params: &ParamSet) -> Self {
        Self::with_betas(learning_rate, 0.5, 0.999, 1e-8, params)
            .expect("default betas are valid")
    }

    pub fn with_betas(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        params: &ParamSet,
    ) -> Result<Self> {
        if !(0.0 < beta1 && beta1 < 1.0) || !(0.0 < beta2 && beta2 < 1.0) {
            return Err(AutodiffError::BadHyper(format!(
                "betas must lie in (0, 1), got beta1={beta1}, beta2={beta2}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(AutodiffError::BadHyper(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if learning_rate <= 0.0 {
            return Err(AutodiffError::BadHyper(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let second = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// One update over the whole parameter set. `grads[i]` must hold the
    /// gradient of parameter `i`; a missing entry is an error naming the
    /// parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in params.ids() {
            let grad = grads
                .get(id.index())
                .and_then(|g| g.as_ref())
                .ok_or_else(|| AutodiffError::MissingGradient {
                    name: params.name(id).to_string(),
                })?;
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = params.get_mut(id).data_mut();
            debug_assert_eq!(p.len(), grad.len());
            for ((pi, mi), (vi, gi)) in p
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(grad.data()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamSet, AdamState) {
        let mut p = ParamSet::new();
        p.add("w", Tensor::vector(vec![1.0, -2.0]));
        let state = AdamState::new(1e-4, &p);
        (p, state)
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let (mut p, mut adam) = setup();
        let grads = vec![Some(Tensor::vector(vec![0.0, 0.0]))];
        for _ in 0..5 {
            adam.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p.get(crate::ParamId(0)).data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(3.0));
        let mut adam = AdamState::new(0.01, &p);
        let grads = vec![Some(Tensor::scalar(1.0))];
        adam.step(&mut p, &grads).unwrap();
        let moved = 3.0 - p.get(crate::ParamId(0)).data()[0];
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let (mut p, mut adam) = setup();
        let err = adam.step(&mut p, &[None]).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let (mut p, mut adam) = setup();
            for k in 0..20 {
                let g = Tensor::vector(vec![0.1 * (k as f64 + 1.0), -0.05]);
                adam.step(&mut p, &[Some(g)]).unwrap();
            }
            p.get(crate::ParamId(0)).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let p = ParamSet::new();
        assert!(AdamState::with_betas(1e-3, 1.0, 0.999, 1e-8, &p).is_err());
        assert!(AdamState::with_betas(1e-3, 0.5, 0.999, 0.0, &p).is_err());
        assert!(AdamState::with_betas(0.0, 0.5, 0.999, 1e-8, &p).is_err());
    }
}
