//! Subcommand definitions and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use momo_core::agent::Mode;
use momo_core::envtoy::{mean, OfflineDataset, Quality};
use momo_core::morse::{density_grid, GridSpec, MorseNetwork};

use crate::ablate::{run_sweep, Sweep};
use crate::config::{peek_task, Preset, RunConfig, Task};
use crate::format::{load_agent, load_dataset, load_dynamics, load_morse, save_agent, save_dataset, save_dynamics, save_morse};
use crate::metrics::{final_return, write_density_grid, CsvLog, AGENT_HEADER, DYNAMICS_HEADER, MORSE_HEADER};
use crate::pipeline::{build_dataset, eval_seed, evaluate, run_agent, run_dynamics, run_morse, task_of};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable config, or a missing prerequisite artifact.
    Usage(String),
    /// Anything that went wrong after the inputs were accepted.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "momo", version, about = "Offline RL with Morse-network policy constraints and truncated model rollouts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset file.
    GenData(GenDataArgs),
    /// Train a Morse network on a dataset.
    TrainMorse(TrainMorseArgs),
    /// Train the Gaussian dynamics model.
    TrainDynamics(TrainDynamicsArgs),
    /// Train the TD3 agent (model-free or model-based).
    TrainAgent(TrainAgentArgs),
    /// Evaluate a saved agent in the point-mass task.
    Eval(EvalArgs),
    /// Export Morse certainty over a 2D action grid.
    DensityGrid(DensityGridArgs),
    /// Run an ablation sweep over ε_trunc, λ or the critic bonus.
    Ablate(AblateArgs),
}

/// Flags shared by every command that resolves a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "paper")]
    pub preset: Preset,
    #[arg(long, env = "MOMO_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<Task>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub quality: Option<Quality>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Output `.momo-data` file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Dataset file; generated from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainMorseArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainDynamicsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AgentFlags {
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Agent gradient steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eps_trunc: Option<f64>,
    #[arg(long)]
    pub real_ratio: Option<f64>,
    /// Drop the log-certainty term from the critic target.
    #[arg(long)]
    pub no_bonus: bool,
    /// Steps of inline Morse training.
    #[arg(long)]
    pub morse_steps: Option<usize>,
    #[arg(long)]
    pub dynamics_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainAgentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub agent: AgentFlags,
    /// Morse checkpoint; trained inline when absent.
    #[arg(long)]
    pub morse: Option<PathBuf>,
    /// Dynamics checkpoint; required in model-based mode.
    #[arg(long)]
    pub dynamics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Run seed the evaluation episodes derive from; defaults to the training seed.
    #[arg(long, env = "MOMO_SEED")]
    pub seed: Option<u64>,
    /// Per-episode CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityGridArgs {
    #[arg(long)]
    pub morse: PathBuf,
    /// Dataset whose distinct states `--state-index` counts through.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub state_index: usize,
    /// Explicit comma-separated state, instead of a dataset state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub state: Option<Vec<f64>>,
    /// Square grid with this many points per axis (default 126 × 127).
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub agent: AgentFlags,
    #[arg(long)]
    pub sweep: Sweep,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainMorse(a) => train_morse_cmd(a),
        Command::TrainDynamics(a) => train_dynamics_cmd(a),
        Command::TrainAgent(a) => train_agent_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::DensityGrid(a) => density_grid_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

/// Preset, then file, then the shared flags. `hint` is the task of a loaded
/// dataset, used when neither the flags nor the file name one.
fn resolve(args: &ConfigArgs, hint: Option<Task>) -> Result<RunConfig, CliError> {
    let text = match &args.config {
        Some(p) => {
            require_file(p, "config file")?;
            Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let file_task = match &text {
        Some(t) => peek_task(t).map_err(|e| usage(format!("invalid config: {e}")))?,
        None => None,
    };
    let task = args.task.or(file_task).or(hint).unwrap_or(Task::Pointmass);
    let mut cfg = RunConfig::preset_for(args.preset, task);
    if let Some(t) = &text {
        cfg = cfg.merge_toml(t).map_err(|e| usage(format!("invalid config: {e}")))?;
    }
    cfg.task = task;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_or_build(run: &RunArgs) -> Result<(RunConfig, OfflineDataset), CliError> {
    match &run.data {
        Some(p) => {
            require_file(p, "dataset")?;
            let data = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
            let mut cfg = resolve(&run.cfg, task_of(&data))?;
            cfg.dataset = Some(p.clone());
            Ok((cfg, data))
        }
        None => {
            let cfg = resolve(&run.cfg, None)?;
            let data = build_dataset(&cfg)?;
            Ok((cfg, data))
        }
    }
}

fn prepare_out(cfg: &mut RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.validate().map_err(|e| usage(format!("invalid configuration: {e}")))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.out = Some(out.to_path_buf());
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&a.cfg, None)?;
    if let Some(q) = a.quality {
        cfg.data.quality = q;
    }
    if let Some(n) = a.size {
        cfg.data.size = n;
    }
    if cfg.data.size == 0 {
        return Err(usage("--size must be at least 1"));
    }
    let data = build_dataset(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&a.out, &data).with_context(|| format!("writing {}", a.out.display()))?;
    let rewards: Vec<f64> = data.transitions().iter().map(|t| t.reward).collect();
    println!("wrote {} ({} transitions, {})", a.out.display(), data.len(), data.meta.generator);
    println!("mean reward per transition {:.4}", mean(&rewards));
    if !data.meta.episode_returns.is_empty() {
        println!(
            "episodes {}, mean return {:.4}",
            data.meta.episode_returns.len(),
            mean(&data.meta.episode_returns)
        );
    }
    if let Some(b) = data.meta.behavior_return {
        println!("scripted behavior return {b:.4}");
    }
    Ok(())
}

fn train_morse_cmd(a: TrainMorseArgs) -> Result<(), CliError> {
    let (mut cfg, data) = load_or_build(&a.run)?;
    if let Some(l) = a.lambda {
        cfg.morse.lambda = l;
    }
    if let Some(s) = a.steps {
        cfg.morse.steps = s;
    }
    cfg.sync_lambda();
    prepare_out(&mut cfg, &a.run.out)?;
    let morse = morse_with_log(&cfg, &data, &a.run.out)?;
    save_morse(&a.run.out.join("morse.ckpt"), &morse)?;
    println!("wrote {}", a.run.out.join("morse.ckpt").display());
    Ok(())
}

fn morse_with_log(cfg: &RunConfig, data: &OfflineDataset, out: &Path) -> Result<MorseNetwork, CliError> {
    let path = out.join("morse-log.csv");
    let mut log = CsvLog::create(&path, &MORSE_HEADER)?;
    let mut err = None;
    let morse = run_morse(cfg, data, &mut |e| {
        eprintln!(
            "morse step {}: loss {:.4} (pos {:.4}, neg {:.4}, gp {:.4})",
            e.step, e.loss, e.positive, e.negative, e.penalty
        );
        if let Err(x) = log.morse_row(e) {
            err.get_or_insert(x);
        }
    })?;
    match err {
        Some(e) => Err(anyhow::Error::from(e).context(format!("writing {}", path.display())).into()),
        None => Ok(morse),
    }
}

fn train_dynamics_cmd(a: TrainDynamicsArgs) -> Result<(), CliError> {
    let (mut cfg, data) = load_or_build(&a.run)?;
    if let Some(s) = a.steps {
        cfg.dynamics.steps = s;
    }
    prepare_out(&mut cfg, &a.run.out)?;
    let path = a.run.out.join("dynamics-log.csv");
    let mut log = CsvLog::create(&path, &DYNAMICS_HEADER)?;
    let mut err = None;
    let trained = run_dynamics(&cfg, &data, &mut |e| {
        eprintln!(
            "dynamics step {}: train nll {:.4}, validation nll {:.4}",
            e.step, e.train_nll, e.validation_nll
        );
        if let Err(x) = log.dynamics_row(e) {
            err.get_or_insert(x);
        }
    })?;
    if let Some(e) = err {
        return Err(anyhow::Error::from(e).context(format!("writing {}", path.display())).into());
    }
    save_dynamics(&a.run.out.join("dynamics.ckpt"), &trained.model)?;
    println!(
        "wrote {} (best validation nll {:.4} at step {})",
        a.run.out.join("dynamics.ckpt").display(),
        trained.best_validation_nll,
        trained.best_step
    );
    Ok(())
}

fn apply_agent_flags(cfg: &mut RunConfig, f: &AgentFlags) {
    if let Some(m) = f.mode {
        cfg.agent.mode = m;
    }
    if let Some(l) = f.lambda {
        cfg.morse.lambda = l;
    }
    if let Some(s) = f.steps {
        cfg.agent.steps = s;
    }
    if let Some(e) = f.eps_trunc {
        cfg.agent.rollout.eps_trunc = e;
    }
    if let Some(r) = f.real_ratio {
        cfg.agent.real_ratio = r;
    }
    if f.no_bonus {
        cfg.agent.bonus = false;
    }
    if let Some(s) = f.morse_steps {
        cfg.morse.steps = s;
    }
    if let Some(s) = f.dynamics_steps {
        cfg.dynamics.steps = s;
    }
    cfg.sync_lambda();
}

fn train_agent_cmd(a: TrainAgentArgs) -> Result<(), CliError> {
    let (mut cfg, data) = load_or_build(&a.run)?;
    apply_agent_flags(&mut cfg, &a.agent);

    // Check every prerequisite before any training starts.
    if cfg.agent.mode == Mode::ModelBased && a.dynamics.is_none() {
        return Err(usage(
            "missing prerequisite: --mode mb needs a dynamics checkpoint; pass --dynamics <path> (see `momo train-dynamics`)",
        ));
    }
    if let Some(p) = &a.dynamics {
        require_file(p, "dynamics checkpoint")?;
    }
    let loaded_morse = match &a.morse {
        Some(p) => {
            require_file(p, "Morse checkpoint")?;
            let m = load_morse(p).with_context(|| format!("loading {}", p.display()))?;
            let scale = m.kernel().scale();
            if a.agent.lambda.is_some_and(|l| l != scale) {
                return Err(usage(format!("--lambda {} conflicts with the Morse checkpoint's λ = {scale}", cfg.morse.lambda)));
            }
            cfg.morse.lambda = scale;
            cfg.sync_lambda();
            Some(m)
        }
        None => None,
    };
    let dynamics = match &a.dynamics {
        Some(p) if cfg.agent.mode == Mode::ModelBased => {
            Some(load_dynamics(p).with_context(|| format!("loading {}", p.display()))?)
        }
        _ => None,
    };
    prepare_out(&mut cfg, &a.run.out)?;
    let out = &a.run.out;
    let morse = match loaded_morse {
        Some(m) => m,
        None => {
            let m = morse_with_log(&cfg, &data, out)?;
            save_morse(&out.join("morse.ckpt"), &m)?;
            m
        }
    };

    let path = out.join("metrics.csv");
    let mut log = CsvLog::create(&path, &AGENT_HEADER)?;
    let mut err = None;
    let trained = run_agent(&cfg, &data, &morse, dynamics.as_ref(), &mut |r| {
        let eval = r.eval_return.map(|v| format!(", eval return {v:.3}")).unwrap_or_default();
        eprintln!(
            "agent step {}: critic {:.4}, actor {:.4}, log M {:.4}{eval}",
            r.step, r.critic_loss, r.actor_loss, r.mean_log_certainty
        );
        if let Err(x) = log.agent_row(r) {
            err.get_or_insert(x);
        }
    })?;
    if let Some(e) = err {
        return Err(anyhow::Error::from(e).context(format!("writing {}", path.display())).into());
    }
    save_agent(&out.join("agent.ckpt"), &trained.agent, &cfg.pointmass, cfg.seed)?;
    println!(
        "pessimism check: {} targets, {} violations",
        trained.pessimism.checked, trained.pessimism.violations
    );
    if let Some(r) = final_return(&trained.metrics) {
        println!("final eval return {r}");
    }
    println!("wrote {}", out.join("agent.ckpt").display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.agent, "agent checkpoint")?;
    if a.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let loaded = load_agent(&a.agent).with_context(|| format!("loading {}", a.agent.display()))?;
    let seed = eval_seed(a.seed.unwrap_or(loaded.seed));
    let returns = momo_core::envtoy::evaluate_pointmass(&loaded.env, a.episodes, seed, |s| {
        loaded.agent.select_action(s, false, &mut momo_core::rng_from_seed(0))
    })?;
    debug_assert_eq!(mean(&returns), evaluate(&loaded.agent, &loaded.env, a.episodes, seed)?);
    if let Some(p) = &a.out {
        let mut log = CsvLog::create(p, &["episode", "return"])?;
        for (i, r) in returns.iter().enumerate() {
            log.row([i.to_string(), r.to_string()])?;
        }
    }
    println!("mean return {}", mean(&returns));
    Ok(())
}

/// Distinct states in order of first appearance.
fn distinct_states(data: &OfflineDataset) -> Vec<Vec<f64>> {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for t in data.transitions() {
        if !seen.iter().any(|s| s == &t.state) {
            seen.push(t.state.clone());
        }
    }
    seen
}

fn density_grid_cmd(a: DensityGridArgs) -> Result<(), CliError> {
    require_file(&a.morse, "Morse checkpoint")?;
    let morse = load_morse(&a.morse).with_context(|| format!("loading {}", a.morse.display()))?;
    let state = match (&a.state, &a.data) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => {
            require_file(p, "dataset")?;
            let data = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
            let states = distinct_states(&data);
            states.get(a.state_index).cloned().ok_or_else(|| {
                usage(format!(
                    "--state-index {} out of range: the dataset has {} distinct states",
                    a.state_index,
                    states.len()
                ))
            })?
        }
        (None, None) => return Err(usage("pass --data (with --state-index) or --state")),
    };
    if state.len() != morse.state_dim() {
        return Err(usage(format!(
            "state has {} components, the Morse net expects {}",
            state.len(),
            morse.state_dim()
        )));
    }
    let grid = match a.resolution {
        Some(0) => return Err(usage("--resolution must be at least 1")),
        Some(n) => GridSpec::square(n),
        None => GridSpec::default(),
    };
    let cells = density_grid(&morse, &state, &grid)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_density_grid(fs::File::create(&a.out)?, &cells)?;
    println!("wrote {} ({} cells)", a.out.display(), cells.len());
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let (mut cfg, data) = load_or_build(&a.run)?;
    apply_agent_flags(&mut cfg, &a.agent);
    prepare_out(&mut cfg, &a.run.out)?;
    // Generated datasets are rebuilt per seed; a given file is shared.
    let shared = a.run.data.as_ref().map(|_| &data);
    let summaries = run_sweep(a.sweep, &cfg, a.seeds, shared, &a.run.out, &mut |m| eprintln!("{m}"))?;
    for s in &summaries {
        let (m, sd) = crate::metrics::mean_std(&s.returns);
        println!("{:<12} mean return {m:.4} ± {sd:.4}", s.name);
    }
    println!("wrote {}", a.run.out.join("summary.csv").display());
    Ok(())
}
