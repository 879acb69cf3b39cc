use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::net::DenseNet;
use crate::error::{check_dim, Error, Result};

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
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam moments for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn for_net(net: &DenseNet, config: AdamConfig) -> Self {
        Self::new(net.param_count(), config)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One bias-corrected Adam update. On a non-finite gradient nothing is
    /// modified and the index of the first offending component is returned.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> core::result::Result<(), usize> {
        assert_eq!(params.len(), self.first.len(), "parameter/moment shape mismatch");
        assert_eq!(grads.len(), self.first.len(), "gradient/moment shape mismatch");
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(bad);
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let step_size = lr / c1;
        let c2_sqrt = libm::sqrt(c2);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step_size * *m / (libm::sqrt(*v) / c2_sqrt + eps);
        }
        Ok(())
    }

    /// [`update`](Self::update) on a network, naming the offending parameter on failure.
    pub fn step_net(&mut self, net: &mut DenseNet, grads: &[f64]) -> Result<()> {
        check_dim("adam gradient", net.param_count(), grads.len())?;
        check_dim("adam state", net.param_count(), self.len())?;
        self.update(net.params_mut(), grads)
            .map_err(|i| Error::NonFiniteGradient { param: net.param_name(i) })
    }
}
