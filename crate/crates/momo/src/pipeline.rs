//! The training stages shared by the subcommands and the ablation sweeps.
//!
//! Every stage draws from its own ChaCha stream of the run seed, so training
//! the Morse net inline or loading it from a checkpoint leaves the agent's
//! random stream untouched.

use momo_core::agent::{train_agent, MetricsRow, Td3Agent, TrainHooks, TrainedAgent};
use momo_core::dynamics::{train_dynamics, DynamicsLogEntry, DynamicsModel, TrainedDynamics};
use momo_core::envtoy::{evaluate_pointmass, make_didactic_dataset, make_pointmass_dataset, mean, OfflineDataset, PointMassConfig};
use momo_core::morse::{train_morse, MorseLogEntry, MorseNetwork};
use momo_core::{rng_for, rng_from_seed, Result};

use crate::config::{RunConfig, Task};

pub const MORSE_STREAM: u64 = 1;
pub const DYNAMICS_STREAM: u64 = 2;
pub const AGENT_STREAM: u64 = 3;

/// Evaluation episodes start from a stream unrelated to training data.
const EVAL_SEED_OFFSET: u64 = 1_000_003;

pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed.wrapping_add(EVAL_SEED_OFFSET)
}

pub fn build_dataset(cfg: &RunConfig) -> Result<OfflineDataset> {
    match cfg.task {
        Task::Didactic => Ok(make_didactic_dataset(cfg.seed)),
        Task::Pointmass => make_pointmass_dataset(&cfg.pointmass, cfg.data.quality, cfg.data.size, cfg.seed),
    }
}

/// The task a dataset was generated for, judged by its metadata.
pub fn task_of(data: &OfflineDataset) -> Option<Task> {
    let g = data.meta.generator.as_str();
    if g.starts_with("didactic") {
        Some(Task::Didactic)
    } else if g.starts_with("pointmass") {
        Some(Task::Pointmass)
    } else {
        None
    }
}

pub fn run_morse(cfg: &RunConfig, data: &OfflineDataset, observer: &mut dyn FnMut(&MorseLogEntry)) -> Result<MorseNetwork> {
    train_morse(&cfg.morse, data, &mut rng_for(cfg.seed, MORSE_STREAM), observer)
}

pub fn run_dynamics(
    cfg: &RunConfig,
    data: &OfflineDataset,
    observer: &mut dyn FnMut(&DynamicsLogEntry),
) -> Result<TrainedDynamics> {
    train_dynamics(&cfg.dynamics, data, &mut rng_for(cfg.seed, DYNAMICS_STREAM), observer)
}

/// Mean deterministic-policy return over `episodes` point-mass episodes.
pub fn evaluate(agent: &Td3Agent, env: &PointMassConfig, episodes: usize, seed: u64) -> Result<f64> {
    let mut unused = rng_from_seed(0);
    let returns = evaluate_pointmass(env, episodes, seed, |s| agent.select_action(s, false, &mut unused))?;
    Ok(mean(&returns))
}

/// Trains the agent; point-mass runs are evaluated every `eval_every` steps.
pub fn run_agent(
    cfg: &RunConfig,
    data: &OfflineDataset,
    morse: &MorseNetwork,
    dynamics: Option<&DynamicsModel>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainedAgent> {
    let seed = eval_seed(cfg.seed);
    let episodes = cfg.agent.eval_episodes;
    let mut eval = |a: &Td3Agent| evaluate(a, &cfg.pointmass, episodes, seed);
    let hooks = TrainHooks {
        evaluate: match cfg.task {
            Task::Pointmass => Some(&mut eval),
            Task::Didactic => None,
        },
        on_row: Some(on_row),
    };
    train_agent(&cfg.agent, data, morse, dynamics, &mut rng_for(cfg.seed, AGENT_STREAM), hooks)
}
