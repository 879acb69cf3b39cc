//! Desk-scale testbeds: the two-state / eight-mode bandit dataset, a
//! deterministic 2D point-mass navigation task with scripted behavior
//! policies, and the offline dataset container shared by every trainer.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::Matrix;
use crate::rng_from_seed;

/// One `(s, a, r, s', terminal)` tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub size: usize,
    /// Returns of the episodes that completed inside the dataset.
    #[serde(default)]
    pub episode_returns: Vec<f64>,
    /// Mean return of the scripted-controller episodes, when there are any.
    #[serde(default)]
    pub behavior_return: Option<f64>,
    /// Index of the first transition of every episode.
    #[serde(default)]
    pub episode_starts: Vec<usize>,
}

/// A static dataset with homogeneous dimensions and a known action box.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    transitions: Vec<Transition>,
    pub meta: DatasetMeta,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I, state_dim: usize, action_dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let (mut s, mut a, mut s2) = (Vec::new(), Vec::new(), Vec::new());
        let (mut r, mut d) = (Vec::new(), Vec::new());
        for t in items {
            s.extend_from_slice(&t.state);
            a.extend_from_slice(&t.action);
            s2.extend_from_slice(&t.next_state);
            r.push(t.reward);
            d.push(t.terminal);
        }
        let n = r.len();
        Batch {
            states: Matrix::from_vec(n, state_dim, s).expect("state dims"),
            actions: Matrix::from_vec(n, action_dim, a).expect("action dims"),
            rewards: r,
            next_states: Matrix::from_vec(n, state_dim, s2).expect("state dims"),
            terminals: d,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(mut self, other: Batch) -> Result<Batch> {
        check_dim("Batch::concat states", self.states.cols(), other.states.cols())?;
        check_dim("Batch::concat actions", self.actions.cols(), other.actions.cols())?;
        let stack = |a: Matrix, b: Matrix| {
            let cols = a.cols();
            let rows = a.rows() + b.rows();
            let mut v = a.into_vec();
            v.extend_from_slice(b.as_slice());
            Matrix::from_vec(rows, cols, v).expect("same width")
        };
        self.states = stack(self.states, other.states);
        self.actions = stack(self.actions, other.actions);
        self.next_states = stack(self.next_states, other.next_states);
        self.rewards.extend(other.rewards);
        self.terminals.extend(other.terminals);
        Ok(self)
    }
}

impl OfflineDataset {
    pub fn new(state_dim: usize, action_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        check_dim("action_low", action_dim, action_low.len())?;
        check_dim("action_high", action_dim, action_high.len())?;
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::contract("action bounds must satisfy low < high"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            action_low,
            action_high,
            transitions: Vec::new(),
            meta: DatasetMeta::default(),
        })
    }

    /// Appends a transition after checking dims, finiteness and action bounds.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim("transition state", self.state_dim, t.state.len())?;
        check_dim("transition next_state", self.state_dim, t.next_state.len())?;
        check_dim("transition action", self.action_dim, t.action.len())?;
        let finite = t.state.iter().chain(&t.action).chain(&t.next_state).all(|v| v.is_finite());
        if !finite || !t.reward.is_finite() {
            return Err(Error::contract("transition values must be finite"));
        }
        let inside = t
            .action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .all(|(a, (l, h))| *a >= *l && *a <= *h);
        if !inside {
            return Err(Error::contract("transition action outside the action bounds"));
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Uniform minibatch, with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::contract("cannot sample from an empty dataset"));
        }
        let n = self.len();
        let picks: Vec<&Transition> = (0..size).map(|_| &self.transitions[rng.random_range(0..n)]).collect();
        Ok(Batch::from_transitions(picks, self.state_dim, self.action_dim))
    }

    /// Per-dimension min/max of the recorded actions, widened by `margin`
    /// times the range on each side.
    pub fn observed_action_box(&self, margin: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.transitions.first()?;
        let mut lo = first.action.clone();
        let mut hi = first.action.clone();
        for t in &self.transitions {
            for (j, a) in t.action.iter().enumerate() {
                lo[j] = lo[j].min(*a);
                hi[j] = hi[j].max(*a);
            }
        }
        for j in 0..lo.len() {
            let mut pad = margin * (hi[j] - lo[j]);
            if pad == 0.0 {
                pad = margin.max(1e-3);
            }
            lo[j] -= pad;
            hi[j] += pad;
        }
        Some((lo, hi))
    }

    /// Episodes are contiguous runs starting at `meta.episode_starts`.
    pub fn episode_start_states(&self) -> Vec<Vec<f64>> {
        self.meta
            .episode_starts
            .iter()
            .filter_map(|&i| self.transitions.get(i))
            .map(|t| t.state.clone())
            .collect()
    }
}

/// The eight unit-circle action modes; mode `k` sits at angle `kπ/4`.
pub fn didactic_modes() -> [[f64; 2]; 8] {
    let mut out = [[0.0; 2]; 8];
    for (k, m) in out.iter_mut().enumerate() {
        let angle = k as f64 * PI / 4.0;
        *m = [libm::cos(angle), libm::sin(angle)];
    }
    out
}

/// Modes belonging to didactic state `state` (0 or 1): alternating modes.
pub fn didactic_state_modes(state: usize) -> [[f64; 2]; 4] {
    let all = didactic_modes();
    let mut out = [[0.0; 2]; 4];
    for (i, m) in out.iter_mut().enumerate() {
        *m = all[2 * i + state];
    }
    out
}

/// One-hot encoding of didactic state `state`.
pub fn didactic_state(state: usize) -> [f64; 2] {
    let mut s = [0.0; 2];
    s[state] = 1.0;
    s
}

pub const DIDACTIC_SAMPLES_PER_STATE: usize = 64;
pub const DIDACTIC_NOISE_STD: f64 = 0.01;

/// Two one-hot states, four alternating unit-circle modes each, 64 noisy
/// samples per state (16 per mode) clipped to `[-1, 1]²`. One-step bandit:
/// zero reward, every transition terminal.
pub fn make_didactic_dataset(seed: u64) -> OfflineDataset {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, DIDACTIC_NOISE_STD).expect("valid std");
    let mut data = OfflineDataset::new(2, 2, vec![-1.0; 2], vec![1.0; 2]).expect("valid bounds");
    for state in 0..2 {
        let modes = didactic_state_modes(state);
        let s = didactic_state(state).to_vec();
        for i in 0..DIDACTIC_SAMPLES_PER_STATE {
            let m = modes[i % 4];
            let action = m.iter().map(|c| (c + noise.sample(&mut rng)).clamp(-1.0, 1.0)).collect();
            data.push(Transition {
                state: s.clone(),
                action,
                reward: 0.0,
                next_state: s.clone(),
                terminal: true,
            })
            .expect("in bounds");
        }
    }
    data.meta = DatasetMeta {
        generator: "didactic".to_string(),
        seed,
        size: data.len(),
        ..DatasetMeta::default()
    };
    data
}

/// Point-mass task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassConfig {
    pub goal: [f64; 2],
    /// Position change per unit action.
    pub step_scale: f64,
    /// The arena is `[-arena, arena]²`.
    pub arena: f64,
    pub goal_radius: f64,
    pub goal_reward: f64,
    pub distance_penalty: f64,
    pub max_steps: usize,
    /// Episodes never start closer than this to the goal.
    pub min_start_distance: f64,
    /// Std of the Gaussian noise on the scripted controller's command.
    pub scripted_noise: f64,
    pub scripted_gain: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            goal: [0.5, 0.5],
            step_scale: 0.1,
            arena: 1.0,
            goal_radius: 0.1,
            goal_reward: 10.0,
            distance_penalty: 0.1,
            max_steps: 50,
            min_start_distance: 0.5,
            scripted_noise: 0.1,
            scripted_gain: 10.0,
        }
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Episode over: the goal was reached or the step cap was hit.
    pub terminal: bool,
    /// The goal was reached (true termination, as opposed to the time cap).
    pub at_goal: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

impl PointMassConfig {
    /// Deterministic transition `s' = clip(s + step_scale·a)` and its reward.
    /// Returns `(s', r, at_goal)`.
    pub fn transition(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        check_dim("point-mass state", 2, s.len())?;
        check_dim("point-mass action", 2, a.len())?;
        if a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::contract("point-mass action outside [-1, 1]"));
        }
        let next: Vec<f64> = s
            .iter()
            .zip(a)
            .map(|(p, v)| (p + self.step_scale * v).clamp(-self.arena, self.arena))
            .collect();
        let d = distance(&next, &self.goal);
        let at_goal = d < self.goal_radius;
        let reward = -self.distance_penalty * d + if at_goal { self.goal_reward } else { 0.0 };
        Ok((next, reward, at_goal))
    }

    /// Proportional controller toward the goal with Gaussian command noise.
    pub fn scripted_action<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, self.scripted_noise.max(0.0)).expect("valid std");
        s.iter()
            .zip(&self.goal)
            .map(|(p, g)| {
                let eps = if self.scripted_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                (self.scripted_gain * (g - p) + eps).clamp(-1.0, 1.0)
            })
            .collect()
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    /// Uniform start position at least `min_start_distance` from the goal.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-self.arena..self.arena)).collect();
            if distance(&s, &self.goal) >= self.min_start_distance {
                return s;
            }
        }
    }
}

/// Stateful episode wrapper around [`PointMassConfig::transition`].
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassEnv {
    pub config: PointMassConfig,
    state: Vec<f64>,
    steps: usize,
}

impl PointMassEnv {
    pub fn new(config: PointMassConfig) -> Self {
        Self {
            state: vec![0.0; 2],
            steps: 0,
            config,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = self.config.sample_start(rng);
        self.steps = 0;
        self.state.clone()
    }

    pub fn reset_to(&mut self, s: &[f64]) -> Result<()> {
        check_dim("point-mass state", 2, s.len())?;
        self.state = s.to_vec();
        self.steps = 0;
        Ok(())
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn step(&mut self, a: &[f64]) -> Result<EnvStep> {
        let (next, reward, at_goal) = self.config.transition(&self.state, a)?;
        self.steps += 1;
        self.state = next.clone();
        Ok(EnvStep {
            next_state: next,
            reward,
            terminal: at_goal || self.steps >= self.config.max_steps,
            at_goal,
        })
    }
}

/// `(s', r, terminal)` for one step from `s` in a fresh episode.
pub fn env_step(env: &PointMassEnv, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
    let (next, r, at_goal) = env.config.transition(s, a)?;
    Ok((next, r, at_goal || env.config.max_steps <= 1))
}

/// Behavior-policy quality tiers for the point-mass dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    /// Noisy proportional controller.
    Scripted,
    /// Each episode is scripted or uniform-random with probability ½.
    Mixed,
    /// Uniform-random actions.
    Random,
}

impl core::str::FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scripted" => Ok(Quality::Scripted),
            "mixed" => Ok(Quality::Mixed),
            "random" => Ok(Quality::Random),
            other => Err(Error::contract(alloc::format!("unknown quality `{other}`"))),
        }
    }
}

impl Quality {
    pub fn name(self) -> &'static str {
        match self {
            Quality::Scripted => "scripted",
            Quality::Mixed => "mixed",
            Quality::Random => "random",
        }
    }
}

/// Rolls behavior episodes in the point-mass task until exactly `size`
/// transitions are recorded. Only goal arrival is stored as terminal; the
/// step cap ends an episode without marking it.
pub fn make_pointmass_dataset(config: &PointMassConfig, quality: Quality, size: usize, seed: u64) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(Error::contract("dataset size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = OfflineDataset::new(2, 2, vec![-1.0; 2], vec![1.0; 2])?;
    let mut env = PointMassEnv::new(config.clone());
    let mut returns = Vec::new();
    let mut scripted_returns = Vec::new();
    let mut starts = Vec::new();
    while data.len() < size {
        let scripted = match quality {
            Quality::Scripted => true,
            Quality::Random => false,
            Quality::Mixed => rng.random_bool(0.5),
        };
        starts.push(data.len());
        let mut s = env.reset(&mut rng);
        let mut ret = 0.0;
        loop {
            let a = if scripted {
                config.scripted_action(&s, &mut rng)
            } else {
                config.random_action(&mut rng)
            };
            let step = env.step(&a)?;
            ret += step.reward;
            data.push(Transition {
                state: s,
                action: a,
                reward: step.reward,
                next_state: step.next_state.clone(),
                terminal: step.at_goal,
            })?;
            s = step.next_state;
            if step.terminal {
                returns.push(ret);
                if scripted {
                    scripted_returns.push(ret);
                }
                break;
            }
            if data.len() == size {
                break;
            }
        }
    }
    data.meta = DatasetMeta {
        generator: alloc::format!("pointmass-{}", quality.name()),
        seed,
        size,
        behavior_return: if scripted_returns.is_empty() {
            None
        } else {
            Some(scripted_returns.iter().sum::<f64>() / scripted_returns.len() as f64)
        },
        episode_returns: returns,
        episode_starts: starts,
    };
    Ok(data)
}

/// Mean undiscounted return of `policy` over `episodes` point-mass episodes
/// whose start states come from `seed`.
pub fn evaluate_pointmass<F>(config: &PointMassConfig, episodes: usize, seed: u64, mut policy: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut rng = rng_from_seed(seed);
    let mut env = PointMassEnv::new(config.clone());
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut ret = 0.0;
        loop {
            let a = policy(&s)?;
            let step = env.step(&a)?;
            ret += step.reward;
            s = step.next_state;
            if step.terminal {
                break;
            }
        }
        returns.push(ret);
    }
    Ok(returns)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
