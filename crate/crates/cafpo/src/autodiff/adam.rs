use serde::{Deserialize, Serialize};

use super::graph::GradStore;
use super::tensor::{DiffError, ParamStore, Tensor};

/// Adam hyperparameters. Defaults follow the conventional
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Adam optimizer state over one [`ParamStore`]: per-parameter first and
/// second moment buffers plus a step counter that advances by exactly one
/// per `step` call.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        let v = store.iter().map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Adam { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters without a gradient in
    /// `grads` are treated as having zero gradient (their moments decay).
    /// Any non-finite gradient rejects the call before mutating anything.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> Result<(), DiffError> {
        for (id, g) in grads.iter() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(DiffError::NonFiniteGradient(store.name(id).to_string()));
                }
                if g.shape() != store.get(id).shape() {
                    return Err(DiffError::ShapeMismatch {
                        op: "adam_step".into(),
                        detail: format!(
                            "param `{}` is {:?}, gradient {:?}",
                            store.name(id),
                            store.get(id).shape(),
                            g.shape()
                        ),
                    });
                }
            }
        }

        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);

        for (id, p) in store.iter_mut() {
            let zero;
            let g: &[f64] = match grads.get(id) {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; p.len()];
                    &zero
                }
            };
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let pv = p.data_mut();
            for k in 0..pv.len() {
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g[k];
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                pv[k] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_fresh_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(&[1.0, -2.0]));
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store);
        let mut g = crate::autodiff::Graph::new();
        let p = g.param(0, id, &store);
        let loss = g.sum(p);
        // Build zero grads by seeding with zero.
        g.forward(&[], &[&store]).unwrap();
        let grads = g.backward(loss, &Tensor::scalar(0.0), &[&store]).unwrap();
        adam.step(&mut store, &grads[0]).unwrap();
        assert_eq!(store.get(id).data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_evaluated_recursion() {
        // grad = 1, lr = 0.1, fresh state: m_hat = 1, v_hat = 1,
        // so the parameter moves by exactly lr / (1 + eps).
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(3.0));
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store);
        let mut g = crate::autodiff::Graph::new();
        let p = g.param(0, id, &store);
        let loss = g.sum(p); // d loss / d x = 1
        g.forward(&[], &[&store]).unwrap();
        let grads = g.backward(loss, &Tensor::scalar(1.0), &[&store]).unwrap();
        adam.step(&mut store, &grads[0]).unwrap();
        let expected = 3.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((store.get(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn step_counter_increments_per_update() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::with_lr(0.01), &store);
        let mut g = crate::autodiff::Graph::new();
        let p = g.param(0, id, &store);
        let loss = g.sum(p);
        for _ in 0..2 {
            g.forward(&[], &[&store]).unwrap();
            let grads = g.backward(loss, &Tensor::scalar(1.0), &[&store]).unwrap();
            adam.step(&mut store, &grads[0]).unwrap();
        }
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn non_finite_gradient_rejected_before_mutation() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store);
        let gs = GradStore::from_parts(vec![Some(Tensor::scalar(f64::NAN))]);
        assert!(adam.step(&mut store, &gs).is_err());
        assert_eq!(store.get(id).item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
