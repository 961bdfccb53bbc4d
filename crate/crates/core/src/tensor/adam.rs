use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter and clears its gradient.
    ///
    /// Fails without touching any parameter if a trainable one has no gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, (_, t))| m.len() != t.numel())
        {
            return Err(Error::Config(
                "parameter set changed since the optimizer was created".into(),
            ));
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
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_default();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
            Tensor::clear_grad(t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut ps = ParamStore::default();
        let idx = ps.register("w", Tensor::vector(vec![value]).with_grad());
        ps.get_mut(idx).set_grad(vec![grad]).unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = -lr / (1 + eps).
        let mut ps = single(0.0, 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut ps).unwrap();
        let w = ps.get(0).data()[0];
        assert!((w + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
        assert_eq!(adam.steps(), 1);
        assert!(ps.get(0).grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut ps = single(0.25, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            ps.get_mut(0).set_grad(vec![0.0]).unwrap();
            adam.step(&mut ps).unwrap();
        }
        assert!((ps.get(0).data()[0] - 0.25).abs() < 1e-9);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut ps = ParamStore::default();
        ps.register("a", Tensor::vector(vec![0.3, -0.7]).with_grad());
        ps.register("b", Tensor::vector(vec![0.3, -0.7]).with_grad());
        let mut adam = Adam::new(AdamConfig::default());
        for k in 0..4 {
            let g = vec![0.1 * k as f64, -0.2];
            ps.get_mut(0).set_grad(g.clone()).unwrap();
            ps.get_mut(1).set_grad(g).unwrap();
            adam.step(&mut ps).unwrap();
        }
        assert_eq!(ps.get(0).data(), ps.get(1).data());
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut ps = ParamStore::default();
        ps.register("head.w", Tensor::vector(vec![1.0]).with_grad());
        let err = Adam::new(AdamConfig::default()).step(&mut ps).unwrap_err();
        assert!(err.to_string().contains("head.w"));
    }
}
