//! TD3 with the Morse policy constraint and anti-exploration bonus.
//!
//! Critic target: `y = r + γ(min Q̄(s', a') + log M(s', a'))` off terminals,
//! `y = r` at terminals. Actor objective: maximize
//! `Q₁(s, π(s)) / mean|Q₁| + log M(s, π(s))`, with the normalizer held
//! constant. Model-based training mixes real transitions with truncated
//! synthetic rollouts.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::envtoy::{Batch, OfflineDataset};
use crate::error::{check_dim, Error, Result};
use crate::morse::MorseNetwork;
use crate::nn::{AdamConfig, AdamState, DenseNet, Matrix, NetSpec};
use crate::rollout::{generate_rollouts, Policy, RolloutConfig, SyntheticBuffer};

/// Guards the Q normalizer against an all-zero critic.
const MIN_Q_SCALE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "mf")]
    ModelFree,
    #[serde(rename = "mb")]
    ModelBased,
}

impl core::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Mode::ModelFree),
            "mb" => Ok(Mode::ModelBased),
            other => Err(Error::Contract(alloc::format!("unknown mode {other:?} (expected mf or mb)"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ModelFree => "mf",
            Mode::ModelBased => "mb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub mode: Mode,
    pub steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Target update rate ρ.
    pub tau: f64,
    /// Actor and target updates happen every `policy_freq` critic updates.
    pub policy_freq: usize,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub exploration_noise: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub depth: usize,
    /// Kernel scale of the Morse network the agent was trained against.
    pub lambda: f64,
    /// Fraction of each batch drawn from the offline dataset in model-based mode.
    pub real_ratio: f64,
    /// The `log M` term inside the critic target.
    pub bonus: bool,
    pub log_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub rollout: RolloutConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ModelFree,
            steps: 1_000_000,
            batch_size: 512,
            gamma: 0.99,
            tau: 0.005,
            policy_freq: 2,
            policy_noise: 0.5,
            noise_clip: 0.5,
            exploration_noise: 0.1,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: 256,
            depth: 2,
            lambda: 1.0,
            real_ratio: 0.5,
            bonus: true,
            log_every: 1000,
            eval_every: 1000,
            eval_episodes: 10,
            rollout: RolloutConfig::default(),
        }
    }
}

impl AgentConfig {
    /// Point-mass scale: 64-unit networks, smaller batches, 60k steps.
    pub fn desk() -> Self {
        Self {
            steps: 60_000,
            batch_size: 128,
            hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && (0.0..=1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.policy_freq > 0
            && self.policy_noise >= 0.0
            && self.noise_clip >= 0.0
            && self.exploration_noise >= 0.0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.hidden > 0
            && self.lambda > 0.0
            && (0.0..=1.0).contains(&self.real_ratio);
        if !ok {
            return Err(Error::contract("invalid agent configuration"));
        }
        self.rollout.validate()
    }
}

/// `r + γ(q + log M)` off terminals, `r` at terminals; the bonus is dropped when disabled.
pub fn bootstrap_target(reward: f64, terminal: bool, gamma: f64, min_q: f64, log_m: f64, bonus: bool) -> f64 {
    if terminal {
        reward
    } else if bonus {
        reward + gamma * (min_q + log_m)
    } else {
        reward + gamma * min_q
    }
}

/// Penalized targets next to the plain TD3 targets for the same batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticTargets {
    pub y: Vec<f64>,
    pub unpenalized: Vec<f64>,
    pub log_m: Vec<f64>,
}

impl CriticTargets {
    pub fn violations(&self) -> usize {
        self.y.iter().zip(&self.unpenalized).filter(|(y, u)| y > u).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticStats {
    pub loss1: f64,
    pub loss2: f64,
    pub checked: usize,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorLoss {
    pub value: f64,
    pub grads: Vec<f64>,
    /// The Q normalizer used, `mean|Q₁|`.
    pub q_scale: f64,
    pub mean_log_m: f64,
}

/// Mean squared error of `critic([s | a])` against `y`, and its gradient.
pub fn critic_loss(critic: &DenseNet, inputs: &Matrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim("critic targets", inputs.rows(), y.len())?;
    if y.is_empty() {
        return Err(Error::contract("critic loss needs a non-empty batch"));
    }
    let (q, mut tape) = critic.forward(inputs)?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut dy = Matrix::zeros(q.rows(), 1);
    for (r, target) in y.iter().enumerate() {
        let err = q.get(r, 0) - target;
        loss += err * err / n;
        dy.set(r, 0, 2.0 * err / n);
    }
    let mut grads = vec![0.0; critic.param_count()];
    critic.backward_into(&mut tape, &dy, Some(&mut grads))?;
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Td3Agent {
    actor: DenseNet,
    critic1: DenseNet,
    critic2: DenseNet,
    actor_target: DenseNet,
    critic1_target: DenseNet,
    critic2_target: DenseNet,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    config: AgentConfig,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    critic_updates: usize,
}

/// Network triple shared by the online and target copies.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub actor: DenseNet,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        state_dim: usize,
        action_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let hidden = vec![config.hidden; config.depth];
        let actor = DenseNet::new(NetSpec::new(state_dim, &hidden, action_dim), 1e-2, rng)?;
        let critic_spec = NetSpec::new(state_dim + action_dim, &hidden, 1).with_layer_norm(true);
        let critic1 = DenseNet::new(critic_spec.clone(), 1.0, rng)?;
        let critic2 = DenseNet::new(critic_spec, 1.0, rng)?;
        let nets = AgentNets { actor, critic1, critic2 };
        Self::from_parts(config, nets.clone(), nets, action_low, action_high)
    }

    /// Rebuilds an agent from online and target networks with fresh optimizer state.
    pub fn from_parts(config: AgentConfig, online: AgentNets, target: AgentNets, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (sd, ad) = (online.actor.input_dim(), online.actor.output_dim());
        check_dim("action bounds", ad, action_low.len())?;
        check_dim("action bounds", ad, action_high.len())?;
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::contract("action bounds need low < high"));
        }
        for c in [&online.critic1, &online.critic2, &target.critic1, &target.critic2] {
            check_dim("critic input", sd + ad, c.input_dim())?;
            check_dim("critic output", 1, c.output_dim())?;
        }
        if target.actor.spec() != online.actor.spec()
            || target.critic1.spec() != online.critic1.spec()
            || target.critic2.spec() != online.critic2.spec()
        {
            return Err(Error::contract("target networks must mirror the online networks"));
        }
        Ok(Self {
            actor_opt: AdamState::for_net(&online.actor, AdamConfig::with_lr(config.actor_lr)),
            critic1_opt: AdamState::for_net(&online.critic1, AdamConfig::with_lr(config.critic_lr)),
            critic2_opt: AdamState::for_net(&online.critic2, AdamConfig::with_lr(config.critic_lr)),
            actor: online.actor,
            critic1: online.critic1,
            critic2: online.critic2,
            actor_target: target.actor,
            critic1_target: target.critic1,
            critic2_target: target.critic2,
            config,
            action_low,
            action_high,
            critic_updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> AgentNets {
        AgentNets {
            actor: self.actor.clone(),
            critic1: self.critic1.clone(),
            critic2: self.critic2.clone(),
        }
    }

    pub fn targets(&self) -> AgentNets {
        AgentNets {
            actor: self.actor_target.clone(),
            critic1: self.critic1_target.clone(),
            critic2: self.critic2_target.clone(),
        }
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn critic1_mut(&mut self) -> &mut DenseNet {
        &mut self.critic1
    }

    pub fn critic2_mut(&mut self) -> &mut DenseNet {
        &mut self.critic2
    }

    pub fn action_bounds(&self) -> (&[f64], &[f64]) {
        (&self.action_low, &self.action_high)
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    /// `mid + half · tanh(y)` per component.
    fn squash(&self, raw: &Matrix) -> Matrix {
        let mut a = raw.clone();
        for r in 0..a.rows() {
            for (j, v) in a.row_mut(r).iter_mut().enumerate() {
                let (lo, hi) = (self.action_low[j], self.action_high[j]);
                *v = 0.5 * (hi + lo) + 0.5 * (hi - lo) * libm::tanh(*v);
            }
        }
        a
    }

    fn clip(&self, a: &mut Matrix) {
        for r in 0..a.rows() {
            for (j, v) in a.row_mut(r).iter_mut().enumerate() {
                *v = v.clamp(self.action_low[j], self.action_high[j]);
            }
        }
    }

    /// Deterministic actions for a batch of states.
    pub fn act_batch(&self, states: &Matrix) -> Result<Matrix> {
        Ok(self.squash(&self.actor.predict(states)?))
    }

    /// Actor output, plus clipped Gaussian exploration noise when `explore` is set.
    pub fn select_action<R: Rng + ?Sized>(&self, s: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.act_batch(&Matrix::row_vector(s))?;
        if explore && self.config.exploration_noise > 0.0 {
            for j in 0..a.cols() {
                let half = 0.5 * (self.action_high[j] - self.action_low[j]);
                let noise = Normal::new(0.0, self.config.exploration_noise * half).expect("positive std");
                a.set(0, j, a.get(0, j) + noise.sample(rng));
            }
            self.clip(&mut a);
        }
        Ok(a.into_vec())
    }

    /// TD3 smoothed targets with and without the Morse bonus.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, morse: &MorseNetwork, rng: &mut R) -> Result<CriticTargets> {
        let cfg = &self.config;
        let mut next_a = self.squash(&self.actor_target.predict(&batch.next_states)?);
        if cfg.policy_noise > 0.0 {
            let noise = Normal::new(0.0, cfg.policy_noise).expect("positive std");
            for r in 0..next_a.rows() {
                for (j, v) in next_a.row_mut(r).iter_mut().enumerate() {
                    let half = 0.5 * (self.action_high[j] - self.action_low[j]);
                    let eps: f64 = noise.sample(rng);
                    *v += half * eps.clamp(-cfg.noise_clip, cfg.noise_clip);
                }
            }
        }
        self.clip(&mut next_a);
        let x = Matrix::hcat(&batch.next_states, &next_a)?;
        let q1 = self.critic1_target.predict(&x)?;
        let q2 = self.critic2_target.predict(&x)?;
        let log_m = morse.log_certainty_batch(&batch.next_states, &next_a)?;
        let mut out = CriticTargets {
            y: Vec::with_capacity(batch.len()),
            unpenalized: Vec::with_capacity(batch.len()),
            log_m,
        };
        for i in 0..batch.len() {
            let q = q1.get(i, 0).min(q2.get(i, 0));
            let (r, done) = (batch.rewards[i], batch.terminals[i]);
            out.y.push(bootstrap_target(r, done, cfg.gamma, q, out.log_m[i], cfg.bonus));
            out.unpenalized.push(bootstrap_target(r, done, cfg.gamma, q, 0.0, false));
        }
        if let Some(i) = out.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training {
                step: self.critic_updates,
                what: alloc::format!(
                    "non-finite critic target at row {i}: r = {}, log M = {}, terminal = {}",
                    batch.rewards[i],
                    out.log_m[i],
                    batch.terminals[i]
                ),
            });
        }
        Ok(out)
    }

    /// One regression step of both critics toward the penalized target.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, morse: &MorseNetwork, rng: &mut R) -> Result<CriticStats> {
        let targets = self.critic_targets(batch, morse, rng)?;
        let x = Matrix::hcat(&batch.states, &batch.actions)?;
        let (loss1, g1) = critic_loss(&self.critic1, &x, &targets.y)?;
        let (loss2, g2) = critic_loss(&self.critic2, &x, &targets.y)?;
        self.critic1_opt.step_net(&mut self.critic1, &g1)?;
        self.critic2_opt.step_net(&mut self.critic2, &g2)?;
        self.critic_updates += 1;
        Ok(CriticStats {
            loss1,
            loss2,
            checked: targets.y.len(),
            violations: targets.violations(),
        })
    }

    /// `−mean[Q₁(s, π(s)) / q_scale + log M(s, π(s))]` and its actor gradient.
    /// `q_scale` defaults to the batch `mean|Q₁|`; either way it is a constant.
    pub fn actor_loss(&self, states: &Matrix, morse: &MorseNetwork, q_scale: Option<f64>) -> Result<ActorLoss> {
        if states.rows() == 0 {
            return Err(Error::contract("actor loss needs a non-empty batch"));
        }
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let n = states.rows() as f64;
        let (raw, mut actor_tape) = self.actor.forward(states)?;
        let a = self.squash(&raw);
        let (q, mut q_tape) = self.critic1.forward(&Matrix::hcat(states, &a)?)?;
        let scale = q_scale.unwrap_or_else(|| (q.as_slice().iter().map(|v| v.abs()).sum::<f64>() / n).max(MIN_Q_SCALE));
        let (log_m, dlog_m) = morse.log_certainty_action_grad(states, &a)?;

        let dq = Matrix::from_vec(q.rows(), 1, vec![-1.0 / (n * scale); q.rows()])?;
        let dx = self.critic1.backward_into(&mut q_tape, &dq, None)?;
        let mut draw = Matrix::zeros(raw.rows(), ad);
        for r in 0..raw.rows() {
            for j in 0..ad {
                let da = dx.get(r, sd + j) - dlog_m.get(r, j) / n;
                let t = libm::tanh(raw.get(r, j));
                let half = 0.5 * (self.action_high[j] - self.action_low[j]);
                draw.set(r, j, da * half * (1.0 - t * t));
            }
        }
        let mut grads = vec![0.0; self.actor.param_count()];
        self.actor.backward_into(&mut actor_tape, &draw, Some(&mut grads))?;
        let mean_log_m = log_m.iter().sum::<f64>() / n;
        let value = -(q.as_slice().iter().sum::<f64>() / (n * scale) + mean_log_m);
        if !value.is_finite() {
            return Err(Error::Training {
                step: self.critic_updates,
                what: alloc::format!("non-finite actor loss {value}"),
            });
        }
        Ok(ActorLoss {
            value,
            grads,
            q_scale: scale,
            mean_log_m,
        })
    }

    /// One actor step followed by a soft update of every target network.
    pub fn actor_update(&mut self, states: &Matrix, morse: &MorseNetwork) -> Result<ActorLoss> {
        let loss = self.actor_loss(states, morse, None)?;
        self.actor_opt.step_net(&mut self.actor, &loss.grads)?;
        self.soft_update();
        Ok(loss)
    }

    /// `θ̄ ← ρθ + (1 − ρ)θ̄` for actor and both critics.
    pub fn soft_update(&mut self) {
        let rho = self.config.tau;
        for (target, online) in [
            (&mut self.actor_target, &self.actor),
            (&mut self.critic1_target, &self.critic1),
            (&mut self.critic2_target, &self.critic2),
        ] {
            for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
                *t = rho * o + (1.0 - rho) * *t;
            }
        }
    }
}

impl Policy for Td3Agent {
    fn act(&self, states: &Matrix) -> Result<Matrix> {
        self.act_batch(states)
    }
}

/// One row of the training metrics log; losses and certainties are means
/// over the updates since the previous row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_log_certainty: f64,
    /// Mean stored length of the latest rollout refresh; NaN in model-free mode.
    pub mean_rollout_len: f64,
    pub eval_return: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PessimismStats {
    pub checked: usize,
    pub violations: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedAgent {
    pub agent: Td3Agent,
    pub metrics: Vec<MetricsRow>,
    pub pessimism: PessimismStats,
    pub synthetic_sampled: usize,
}

/// Callbacks for [`train_agent`].
pub struct TrainHooks<'a> {
    /// Evaluation return of the current agent, called every `eval_every` steps.
    pub evaluate: Option<&'a mut dyn FnMut(&Td3Agent) -> Result<f64>>,
    /// Receives each metrics row as soon as it is produced.
    pub on_row: Option<&'a mut dyn FnMut(&MetricsRow)>,
}

impl TrainHooks<'_> {
    pub fn none() -> Self {
        TrainHooks {
            evaluate: None,
            on_row: None,
        }
    }
}

#[derive(Default)]
struct Window {
    critic: f64,
    critic_n: usize,
    actor: f64,
    log_m: f64,
    actor_n: usize,
}

/// The offline training loop. Rollout noise draws from a stream split off
/// `rng` up front, so model-based training with `real_ratio = 1` consumes the
/// main stream exactly like model-free training.
pub fn train_agent<R: Rng + ?Sized>(
    config: &AgentConfig,
    dataset: &OfflineDataset,
    morse: &MorseNetwork,
    dynamics: Option<&DynamicsModel>,
    rng: &mut R,
    hooks: TrainHooks<'_>,
) -> Result<TrainedAgent> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("cannot train an agent on an empty dataset"));
    }
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    check_dim("Morse state dim", sd, morse.state_dim())?;
    check_dim("Morse action dim", ad, morse.action_dim())?;
    let dynamics = match (config.mode, dynamics) {
        (Mode::ModelBased, None) => {
            return Err(Error::contract("model-based training requires a dynamics model"));
        }
        (Mode::ModelBased, Some(d)) => {
            check_dim("dynamics state dim", sd, d.state_dim())?;
            Some(d)
        }
        (Mode::ModelFree, _) => None,
    };
    let TrainHooks { mut evaluate, mut on_row } = hooks;
    let mut agent = Td3Agent::new(
        config.clone(),
        sd,
        ad,
        dataset.action_low().to_vec(),
        dataset.action_high().to_vec(),
        rng,
    )?;
    let mut rollout_rng = crate::Rng::seed_from_u64(rng.random());
    let mut buffer = SyntheticBuffer::new(config.rollout.buffer_capacity);
    let mut last_rollout_len = f64::NAN;
    let mut pessimism = PessimismStats::default();
    let mut window = Window::default();
    let mut metrics = Vec::new();
    let mut synthetic_sampled = 0;
    let n_real = libm::ceil(config.real_ratio * config.batch_size as f64) as usize;

    for step in 1..=config.steps {
        let fail = |e: Error| e.at_step(step);
        if let Some(model) = dynamics {
            let every = config.rollout.refresh_every.max(1);
            if (step - 1) % every == 0 {
                let out = generate_rollouts(
                    &agent,
                    morse,
                    model,
                    dataset,
                    &config.rollout,
                    config.rollout.rollouts_per_refresh,
                    &mut rollout_rng,
                )
                .map_err(fail)?;
                last_rollout_len = out.mean_length();
                buffer.extend(out.transitions);
            }
        }
        let batch = if dynamics.is_some() && n_real < config.batch_size && !buffer.is_empty() {
            let real = dataset.sample_batch(n_real, rng).map_err(fail)?;
            let synth = buffer.sample_batch(config.batch_size - n_real, sd, ad, rng).map_err(fail)?;
            synthetic_sampled += synth.len();
            real.concat(synth).map_err(fail)?
        } else {
            dataset.sample_batch(config.batch_size, rng).map_err(fail)?
        };
        let stats = agent.critic_update(&batch, morse, rng).map_err(fail)?;
        pessimism.checked += stats.checked;
        pessimism.violations += stats.violations;
        window.critic += 0.5 * (stats.loss1 + stats.loss2);
        window.critic_n += 1;
        if step % config.policy_freq == 0 {
            let loss = agent.actor_update(&batch.states, morse).map_err(fail)?;
            window.actor += loss.value;
            window.log_m += loss.mean_log_m;
            window.actor_n += 1;
        }

        let log_now = config.log_every > 0 && step % config.log_every == 0;
        let eval_now = config.eval_every > 0 && step % config.eval_every == 0;
        if log_now || eval_now {
            let eval_return = match (&mut evaluate, eval_now) {
                (Some(f), true) => Some(f(&agent).map_err(fail)?),
                _ => None,
            };
            let avg = |sum: f64, n: usize| if n == 0 { f64::NAN } else { sum / n as f64 };
            let row = MetricsRow {
                step,
                critic_loss: avg(window.critic, window.critic_n),
                actor_loss: avg(window.actor, window.actor_n),
                mean_log_certainty: avg(window.log_m, window.actor_n),
                mean_rollout_len: last_rollout_len,
                eval_return,
            };
            window = Window::default();
            if let Some(f) = &mut on_row {
                f(&row);
            }
            metrics.push(row);
        }
    }
    Ok(TrainedAgent {
        agent,
        metrics,
        pessimism,
        synthetic_sampled,
    })
}
