use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, v, _)| Tensor::zeros(v.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are zeroed afterwards. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((name, _, _)) = params.iter().find(|(_, _, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.t as f64;
        let c1 = 1.0 - b1.powf(t);
        let c2 = 1.0 - b2.powf(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = params.grad(id).data().to_vec();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let value = params.value_mut(id).data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![value])).unwrap();
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(vec![0.3, -1.2])).unwrap();
        store.insert("b", Tensor::zeros(&[2, 2])).unwrap();
        let before = store.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut store = scalar_store(0.0);
        let id = store.id("w").unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &store);
        store.grad_mut(id).data_mut()[0] = 1.0;
        adam.step(&mut store).unwrap();
        let w = store.value(id).data()[0];
        assert!((w + 0.1).abs() < 1e-8, "{w}");
        assert_eq!(store.grad(id).data()[0], 0.0);
    }

    #[test]
    fn five_step_trajectory_matches_unrolled_recurrence() {
        let grads = [0.5, -1.0, 2.0, 0.25, -0.75];
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut store = scalar_store(1.0);
        let id = store.id("w").unwrap();
        let mut adam = AdamState::new(cfg, &store);
        for &g in &grads {
            store.grad_mut(id).data_mut()[0] = g;
            adam.step(&mut store).unwrap();
        }

        // Unrolled by hand.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut b1t = 1.0;
        let mut b2t = 1.0;
        for &g in &grads {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            b1t *= b1;
            b2t *= b2;
            w -= lr * (m / (1.0 - b1t)) / ((v / (1.0 - b2t)).sqrt() + eps);
        }
        assert!((store.value(id).data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = scalar_store(0.0);
        store.insert("bad", Tensor::vector(vec![1.0])).unwrap();
        let bad = store.id("bad").unwrap();
        store.grad_mut(bad).data_mut()[0] = f64::NAN;
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        match adam.step(&mut store) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "bad"),
            other => panic!("{other:?}"),
        }
        assert_eq!(adam.steps(), 0);
    }
}
