use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::{GradError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state; moments are created lazily per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update. Returns `false` (and leaves every
    /// parameter and moment untouched) when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<bool> {
        for (id, g) in grads {
            if store.tensor(*id).shape() != g.shape() {
                return Err(GradError::Shape {
                    op: "adam",
                    detail: format!(
                        "{}: parameter {:?}, gradient {:?}",
                        store.name(*id),
                        store.tensor(*id).shape(),
                        g.shape()
                    ),
                });
            }
        }
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            log::warn!(
                "non-finite gradient for {}; skipping optimizer step {}",
                store.name(*id),
                self.step + 1
            );
            return Ok(false);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.tensor_mut(*id).data_mut();
            for (((pi, mi), vi), &gi) in p
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(true)
    }

    /// Moments keyed by parameter, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (ParamId, &Tensor, &Tensor)> {
        self.moments.iter().map(|(id, (m, v))| (*id, m, v))
    }

    /// Restores a checkpointed state.
    pub fn restore(
        config: AdamConfig,
        step: u64,
        moments: impl IntoIterator<Item = (ParamId, Tensor, Tensor)>,
    ) -> Self {
        Self {
            config,
            step,
            moments: moments.into_iter().map(|(id, m, v)| (id, (m, v))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(vec![1], vec![x]), true).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = scalar_store(1.5);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut store, &[(id, Tensor::new(vec![1], vec![0.0]))])
                .unwrap();
        }
        assert_eq!(store.tensor(id).data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut store, &[(id, Tensor::new(vec![1], vec![1.0]))])
            .unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.tensor(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            adam.step(&mut store, &[(id, Tensor::new(vec![1], vec![-3.0]))])
                .unwrap();
            let now = store.tensor(id).data()[0];
            last_step = now - prev;
            prev = now;
        }
        assert!(last_step > 0.0);
        assert!((last_step - 1e-3).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn non_finite_gradient_skips_update() {
        let (mut store, id) = scalar_store(2.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let applied = adam
            .step(&mut store, &[(id, Tensor::new(vec![1], vec![f64::NAN]))])
            .unwrap();
        assert!(!applied);
        assert_eq!(adam.steps(), 0);
        assert_eq!(store.tensor(id).data(), &[2.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (mut store, id) = scalar_store(2.0);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(adam.step(&mut store, &[(id, Tensor::zeros(&[2]))]).is_err());
    }
}
