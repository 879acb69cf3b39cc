//! Single diagonal-Gaussian dynamics model `T̂(s', r | s, a)` trained by
//! maximum likelihood. The network predicts the state delta and the reward,
//! each with its own log standard deviation.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envtoy::{Batch, OfflineDataset};
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, Matrix, NetSpec};

pub const LOG_STD_LOW: f64 = -10.0;
pub const LOG_STD_HIGH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    pub hidden: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub log_std_low: f64,
    pub log_std_high: f64,
    pub log_every: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            steps: 100_000,
            lr: 3e-4,
            validation_fraction: 0.1,
            hidden: 256,
            depth: 5,
            layer_norm: true,
            log_std_low: LOG_STD_LOW,
            log_std_high: LOG_STD_HIGH,
            log_every: 1000,
        }
    }
}

impl DynamicsConfig {
    /// Five layers of 64 units; enough for the point-mass task.
    pub fn desk() -> Self {
        Self {
            batch_size: 128,
            steps: 5_000,
            lr: 1e-3,
            hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.hidden > 0
            && self.log_std_low < self.log_std_high;
        if ok {
            Ok(())
        } else {
            Err(Error::contract("invalid dynamics configuration"))
        }
    }
}

/// How `step` turns the predicted Gaussian into a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Sample,
    /// Use the predicted mean; for tests and evaluation.
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsLoss {
    pub value: f64,
    pub grads: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsLogEntry {
    pub step: usize,
    pub train_nll: f64,
    pub validation_nll: f64,
}

/// Per-row predicted mean and log-std of `(Δs ⧺ r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Matrix,
    pub log_std: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    body: DenseNet,
    log_std_low: f64,
    log_std_high: f64,
    state_dim: usize,
    action_dim: usize,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Smooth clamp into `[low, high]` and its derivative. The two softplus
/// stages can overshoot a bound by at most `log1p(e^-(high-low))`; a final
/// hard clamp removes that sliver.
pub fn soft_clamp(raw: f64, low: f64, high: f64) -> (f64, f64) {
    let upper = high - softplus(high - raw);
    let v = low + softplus(upper - low);
    let d = sigmoid(high - raw) * sigmoid(upper - low);
    if v > high {
        (high, 0.0)
    } else {
        (v, d)
    }
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(config: &DynamicsConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let spec = NetSpec::new(state_dim + action_dim, &vec![config.hidden; config.depth], 2 * (state_dim + 1))
            .with_layer_norm(config.layer_norm);
        let body = DenseNet::new(spec, 1.0, rng)?;
        Self::from_parts(body, config.log_std_low, config.log_std_high, state_dim, action_dim)
    }

    pub fn from_parts(body: DenseNet, log_std_low: f64, log_std_high: f64, state_dim: usize, action_dim: usize) -> Result<Self> {
        check_dim("dynamics input", state_dim + action_dim, body.input_dim())?;
        check_dim("dynamics output", 2 * (state_dim + 1), body.output_dim())?;
        if !(log_std_low < log_std_high) || !log_std_low.is_finite() || !log_std_high.is_finite() {
            return Err(Error::contract("log-std clamp needs finite low < high"));
        }
        Ok(Self {
            body,
            log_std_low,
            log_std_high,
            state_dim,
            action_dim,
        })
    }

    pub fn body(&self) -> &DenseNet {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut DenseNet {
        &mut self.body
    }

    pub fn clamp_bounds(&self) -> (f64, f64) {
        (self.log_std_low, self.log_std_high)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn inputs(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        check_dim("dynamics state", self.state_dim, states.cols())?;
        check_dim("dynamics action", self.action_dim, actions.cols())?;
        Matrix::hcat(states, actions)
    }

    fn split(&self, raw: &Matrix) -> Prediction {
        let d = self.state_dim + 1;
        let mean = raw.columns(0, d);
        let mut log_std = raw.columns(d, d);
        for v in log_std.as_mut_slice() {
            *v = soft_clamp(*v, self.log_std_low, self.log_std_high).0;
        }
        Prediction { mean, log_std }
    }

    pub fn predict(&self, states: &Matrix, actions: &Matrix) -> Result<Prediction> {
        let raw = self.body.predict(&self.inputs(states, actions)?)?;
        Ok(self.split(&raw))
    }

    /// Mean Gaussian negative log-likelihood of `(s' − s, r)`, summed over
    /// output dimensions and averaged over the batch.
    pub fn nll(&self, batch: &Batch) -> Result<DynamicsLoss> {
        if batch.is_empty() {
            return Err(Error::contract("dynamics loss needs a non-empty batch"));
        }
        check_dim("dynamics next state", self.state_dim, batch.next_states.cols())?;
        let x = self.inputs(&batch.states, &batch.actions)?;
        let (raw, mut tape) = self.body.forward(&x)?;
        let d = self.state_dim + 1;
        let n = batch.len() as f64;
        let half_log_2pi = 0.5 * libm::log(2.0 * PI);
        let mut value = 0.0;
        let mut dy = Matrix::zeros(raw.rows(), raw.cols());
        for r in 0..raw.rows() {
            for j in 0..d {
                let target = if j < self.state_dim {
                    batch.next_states.get(r, j) - batch.states.get(r, j)
                } else {
                    batch.rewards[r]
                };
                let mu = raw.get(r, j);
                let (ls, dls) = soft_clamp(raw.get(r, d + j), self.log_std_low, self.log_std_high);
                let inv_var = libm::exp(-2.0 * ls);
                let err = target - mu;
                value += 0.5 * err * err * inv_var + ls + half_log_2pi;
                dy.set(r, j, -err * inv_var / n);
                dy.set(r, d + j, (1.0 - err * err * inv_var) * dls / n);
            }
        }
        value /= n;
        if !value.is_finite() {
            return Err(Error::Training {
                step: 0,
                what: alloc::format!("non-finite dynamics NLL {value}"),
            });
        }
        let mut grads = vec![0.0; self.body.param_count()];
        self.body.backward_into(&mut tape, &dy, Some(&mut grads))?;
        Ok(DynamicsLoss { value, grads })
    }

    /// Batched step: `s' = s + Δs`, with `(Δs, r)` drawn per `mode`.
    pub fn step_batch<R: Rng + ?Sized>(
        &self,
        states: &Matrix,
        actions: &Matrix,
        mode: StepMode,
        rng: &mut R,
    ) -> Result<(Matrix, Vec<f64>)> {
        let p = self.predict(states, actions)?;
        let mut next = states.clone();
        let mut rewards = Vec::with_capacity(states.rows());
        for r in 0..states.rows() {
            for j in 0..=self.state_dim {
                let mut v = p.mean.get(r, j);
                if mode == StepMode::Sample {
                    let z: f64 = StandardNormal.sample(rng);
                    v += libm::exp(p.log_std.get(r, j)) * z;
                }
                if j < self.state_dim {
                    next.set(r, j, next.get(r, j) + v);
                } else {
                    rewards.push(v);
                }
            }
        }
        Ok((next, rewards))
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], mode: StepMode, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let (next, r) = self.step_batch(&Matrix::row_vector(s), &Matrix::row_vector(a), mode, rng)?;
        Ok((next.into_vec(), r[0]))
    }
}

/// `⌊fraction · n⌋`, the number of transitions held out for validation.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    libm::floor(fraction * n as f64) as usize
}

#[derive(Clone, Debug)]
pub struct TrainedDynamics {
    pub model: DynamicsModel,
    /// Dataset indices used for validation.
    pub holdout: Vec<usize>,
    pub best_step: usize,
    pub best_validation_nll: f64,
}

/// Maximum-likelihood training on a random train/validation split; the
/// returned model is the checkpoint with the lowest validation NLL among
/// the initial model and every logging step.
pub fn train_dynamics<R: Rng + ?Sized>(
    config: &DynamicsConfig,
    dataset: &OfflineDataset,
    rng: &mut R,
    observer: &mut dyn FnMut(&DynamicsLogEntry),
) -> Result<TrainedDynamics> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("cannot train dynamics on an empty dataset"));
    }
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let mut model = DynamicsModel::new(config, sd, ad, rng)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let n_val = holdout_count(dataset.len(), config.validation_fraction);
    let (holdout, train) = order.split_at(n_val);
    if train.is_empty() {
        return Err(Error::contract("validation split leaves no training data"));
    }
    let all = dataset.transitions();
    let validation = (!holdout.is_empty()).then(|| Batch::from_transitions(holdout.iter().map(|&i| &all[i]), sd, ad));

    let mut adam = AdamState::for_net(&model.body, AdamConfig::with_lr(config.lr));
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_val = match &validation {
        Some(v) => model.nll(v)?.value,
        None => f64::INFINITY,
    };
    for step in 1..=config.steps {
        let batch = Batch::from_transitions((0..config.batch_size).map(|_| &all[train[rng.random_range(0..train.len())]]), sd, ad);
        let loss = model.nll(&batch).map_err(|e| e.at_step(step))?;
        adam.step_net(&mut model.body, &loss.grads).map_err(|e| e.at_step(step))?;
        let last = step == config.steps;
        if (config.log_every > 0 && step % config.log_every == 0) || last {
            let val = match &validation {
                Some(v) => model.nll(v).map_err(|e| e.at_step(step))?.value,
                None => loss.value,
            };
            if val < best_val || validation.is_none() {
                best_val = val;
                best = model.clone();
                best_step = step;
            }
            if config.log_every > 0 && step % config.log_every == 0 {
                observer(&DynamicsLogEntry {
                    step,
                    train_nll: loss.value,
                    validation_nll: val,
                });
            }
        }
    }
    Ok(TrainedDynamics {
        model: best,
        holdout: holdout.to_vec(),
        best_step,
        best_validation_nll: best_val,
    })
}
