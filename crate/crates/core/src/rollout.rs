//! Synthetic rollouts under the learned dynamics, truncated once the running
//! Morse-probability of the trajectory `P = Π M(sᵢ, aᵢ)` drops below
//! `ε_trunc`. Truncation is not termination: the cut transition is dropped
//! and nothing is marked terminal.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::envtoy::{Batch, OfflineDataset, Transition};
use crate::error::{check_dim, Error, Result};
use crate::morse::MorseNetwork;
use crate::nn::Matrix;

/// Deterministic batched policy.
pub trait Policy {
    fn act(&self, states: &Matrix) -> Result<Matrix>;
}

impl<F: Fn(&Matrix) -> Result<Matrix>> Policy for F {
    fn act(&self, states: &Matrix) -> Result<Matrix> {
        self(states)
    }
}

fn check_unit(x: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Contract(alloc::format!("{what} must lie in [0, 1], got {x}")))
    }
}

/// `P < ε`, strictly.
pub fn trunc(p: f64, eps: f64) -> Result<bool> {
    check_unit(p, "trajectory probability")?;
    check_unit(eps, "truncation threshold")?;
    Ok(p < eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTracker {
    probability: f64,
    steps: usize,
    truncated: bool,
}

impl Default for RolloutTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl RolloutTracker {
    pub fn new() -> Self {
        Self {
            probability: 1.0,
            steps: 0,
            truncated: false,
        }
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Folds in one certainty factor; returns whether the trajectory is now truncated.
    pub fn step(&mut self, m: f64, eps: f64) -> Result<bool> {
        if self.truncated {
            return Err(Error::contract("tracker already truncated"));
        }
        check_unit(m, "certainty factor")?;
        let p = self.probability * m;
        self.truncated = trunc(p, eps)?;
        self.probability = p;
        self.steps += 1;
        Ok(self.truncated)
    }
}

/// Bounded FIFO of synthetic transitions.
#[derive(Clone, Debug)]
pub struct SyntheticBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl SyntheticBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, items: I) {
        for t in items {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions ever made, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::contract("cannot sample from an empty synthetic buffer"));
        }
        let n = self.len();
        Ok(Batch::from_transitions(
            (0..size).map(|_| &self.items[rng.random_range(0..n)]),
            state_dim,
            action_dim,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartStates {
    /// Uniform over every dataset state.
    Dataset,
    /// Uniform over the first state of each recorded episode.
    EpisodeStarts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub eps_trunc: f64,
    pub exploration_noise: f64,
    pub rollouts_per_refresh: usize,
    pub refresh_every: usize,
    pub buffer_capacity: usize,
    pub start: StartStates,
    /// Keep the transition whose certainty triggered the cut.
    pub keep_truncating_step: bool,
    pub sample_dynamics: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            eps_trunc: 0.95,
            exploration_noise: 0.1,
            rollouts_per_refresh: 50,
            refresh_every: 250,
            buffer_capacity: 100_000,
            start: StartStates::Dataset,
            keep_truncating_step: false,
            sample_dynamics: true,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit(self.eps_trunc, "eps_trunc")?;
        if self.horizon == 0 || self.exploration_noise < 0.0 {
            return Err(Error::contract("rollout horizon must be ≥ 1 and noise ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutOutcome {
    pub transitions: Vec<Transition>,
    /// Stored transitions per rollout.
    pub lengths: Vec<usize>,
    /// Whether each rollout ended by truncation rather than at the horizon.
    pub truncated: Vec<bool>,
}

impl RolloutOutcome {
    pub fn mean_length(&self) -> f64 {
        if self.lengths.is_empty() {
            0.0
        } else {
            self.lengths.iter().sum::<usize>() as f64 / self.lengths.len() as f64
        }
    }
}

/// Runs `count` truncated rollouts in lockstep. Every rollout owns an rng
/// stream seeded from `rng`, and all batched evaluations are row-independent,
/// so a rollout's trajectory does not depend on which others are still alive.
pub fn generate_rollouts<P: Policy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    morse: &MorseNetwork,
    dynamics: &DynamicsModel,
    dataset: &OfflineDataset,
    config: &RolloutConfig,
    count: usize,
    rng: &mut R,
) -> Result<RolloutOutcome> {
    config.validate()?;
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    check_dim("rollout morse state", sd, morse.state_dim())?;
    check_dim("rollout dynamics state", sd, dynamics.state_dim())?;
    let pool: Vec<&[f64]> = match config.start {
        StartStates::Dataset => dataset.transitions().iter().map(|t| t.state.as_slice()).collect(),
        StartStates::EpisodeStarts => dataset
            .meta
            .episode_starts
            .iter()
            .filter_map(|&i| dataset.transitions().get(i))
            .map(|t| t.state.as_slice())
            .collect(),
    };
    if pool.is_empty() {
        return Err(Error::contract("no start states available for rollouts"));
    }
    let (low, high) = (dataset.action_low(), dataset.action_high());
    let noise = Normal::new(0.0, config.exploration_noise).map_err(|_| Error::contract("bad exploration noise"))?;

    let mut rngs: Vec<crate::Rng> = Vec::with_capacity(count);
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut r = crate::Rng::seed_from_u64(rng.random());
        states.push(pool[r.random_range(0..pool.len())].to_vec());
        rngs.push(r);
    }
    let mut trackers = alloc::vec![RolloutTracker::new(); count];
    let mut out = RolloutOutcome {
        transitions: Vec::new(),
        lengths: alloc::vec![0; count],
        truncated: alloc::vec![false; count],
    };
    let mut alive: Vec<usize> = (0..count).collect();

    for _ in 0..config.horizon {
        if alive.is_empty() {
            break;
        }
        let s = Matrix::from_rows(&alive.iter().map(|&i| states[i].as_slice()).collect::<Vec<_>>())?;
        let mut a = policy.act(&s)?;
        check_dim("policy action", ad, a.cols())?;
        for (row, &i) in alive.iter().enumerate() {
            for (j, v) in a.row_mut(row).iter_mut().enumerate() {
                *v = (*v + noise.sample(&mut rngs[i])).clamp(low[j], high[j]);
            }
        }
        let m = morse.certainty_batch(&s, &a)?;
        let pred = dynamics.predict(&s, &a)?;
        let mut next_alive = Vec::with_capacity(alive.len());
        for (row, &i) in alive.iter().enumerate() {
            let cut = trackers[i].step(m[row], config.eps_trunc)?;
            if cut {
                out.truncated[i] = true;
                if !config.keep_truncating_step {
                    continue;
                }
            }
            let mut delta = Vec::with_capacity(sd + 1);
            for j in 0..=sd {
                let mut v = pred.mean.get(row, j);
                if config.sample_dynamics {
                    let z: f64 = StandardNormal.sample(&mut rngs[i]);
                    v += libm::exp(pred.log_std.get(row, j)) * z;
                }
                delta.push(v);
            }
            let next: Vec<f64> = states[i].iter().zip(&delta).map(|(x, d)| x + d).collect();
            if !next.iter().all(|v| v.is_finite()) || !delta[sd].is_finite() {
                return Err(Error::contract("dynamics produced a non-finite transition"));
            }
            out.transitions.push(Transition {
                state: states[i].clone(),
                action: a.row(row).to_vec(),
                reward: delta[sd],
                next_state: next.clone(),
                terminal: false,
            });
            out.lengths[i] += 1;
            states[i] = next;
            if !cut {
                next_alive.push(i);
            }
        }
        alive = next_alive;
    }
    Ok(out)
}
