//! Ablation sweeps: one directory per cell, one metrics CSV per seed, and a
//! summary table over seeds.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use momo_core::agent::Mode;
use momo_core::dynamics::DynamicsModel;
use momo_core::envtoy::OfflineDataset;
use momo_core::morse::{no_log, MorseNetwork};

use crate::config::RunConfig;
use crate::metrics::{final_return, mean_std, CsvLog, AGENT_HEADER};
use crate::pipeline::{build_dataset, run_agent, run_dynamics, run_morse};

pub const EPS_VALUES: [f64; 5] = [0.80, 0.85, 0.90, 0.95, 0.98];
pub const LAMBDA_VALUES: [f64; 4] = [0.1, 1.0, 2.0, 4.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Truncation threshold; always model-based, since only rollouts see it.
    Eps,
    Lambda,
    /// Critic-target bonus on and off.
    Bonus,
}

impl FromStr for Sweep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eps" => Ok(Sweep::Eps),
            "lambda" => Ok(Sweep::Lambda),
            "bonus" => Ok(Sweep::Bonus),
            other => Err(format!("unknown sweep `{other}` (expected eps, lambda or bonus)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub param: &'static str,
    pub value: String,
    pub config: RunConfig,
}

pub fn cells(sweep: Sweep, base: &RunConfig) -> Vec<Cell> {
    match sweep {
        Sweep::Eps => EPS_VALUES
            .iter()
            .map(|&eps| {
                let mut c = base.clone();
                c.agent.mode = Mode::ModelBased;
                c.agent.rollout.eps_trunc = eps;
                Cell {
                    name: format!("eps-{eps:.2}"),
                    param: "eps_trunc",
                    value: format!("{eps:.2}"),
                    config: c,
                }
            })
            .collect(),
        Sweep::Lambda => LAMBDA_VALUES
            .iter()
            .map(|&lambda| {
                let mut c = base.clone();
                c.morse.lambda = lambda;
                c.sync_lambda();
                Cell {
                    name: format!("lambda-{lambda}"),
                    param: "lambda",
                    value: lambda.to_string(),
                    config: c,
                }
            })
            .collect(),
        Sweep::Bonus => [true, false]
            .iter()
            .map(|&on| {
                let mut c = base.clone();
                c.agent.bonus = on;
                Cell {
                    name: if on { "bonus-on" } else { "bonus-off" }.to_string(),
                    param: "bonus",
                    value: on.to_string(),
                    config: c,
                }
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub name: String,
    pub param: &'static str,
    pub value: String,
    pub returns: Vec<f64>,
    pub rollout_lengths: Vec<f64>,
}

/// Runs every cell for seeds `base.seed .. base.seed + seeds`. Morse nets and
/// dynamics models depend only on the seed (and λ), so they are trained once
/// and shared by the cells that agree on them.
pub fn run_sweep(
    sweep: Sweep,
    base: &RunConfig,
    seeds: usize,
    dataset: Option<&OfflineDataset>,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> anyhow::Result<Vec<CellSummary>> {
    let cells = cells(sweep, base);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for c in &cells {
        let dir = out.join(&c.name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), c.config.to_toml())?;
    }
    let mut summaries: Vec<CellSummary> = cells
        .iter()
        .map(|c| CellSummary {
            name: c.name.clone(),
            param: c.param,
            value: c.value.clone(),
            returns: Vec::new(),
            rollout_lengths: Vec::new(),
        })
        .collect();

    for k in 0..seeds {
        let seed = base.seed + k as u64;
        let mut seeded = base.clone();
        seeded.seed = seed;
        let generated;
        let data = match dataset {
            Some(d) => d,
            None => {
                generated = build_dataset(&seeded)?;
                &generated
            }
        };
        let mut morse_cache: HashMap<u64, MorseNetwork> = HashMap::new();
        let mut dynamics: Option<DynamicsModel> = None;
        for (cell, summary) in cells.iter().zip(&mut summaries) {
            let mut cfg = cell.config.clone();
            cfg.seed = seed;
            let key = cfg.morse.lambda.to_bits();
            if !morse_cache.contains_key(&key) {
                progress(&format!("seed {seed}: training Morse net (lambda {})", cfg.morse.lambda));
                morse_cache.insert(key, run_morse(&cfg, data, &mut no_log())?);
            }
            if cfg.agent.mode == Mode::ModelBased && dynamics.is_none() {
                progress(&format!("seed {seed}: training dynamics"));
                dynamics = Some(run_dynamics(&cfg, data, &mut |_| {})?.model);
            }
            progress(&format!("seed {seed}: {}", cell.name));
            let path = out.join(&cell.name).join(format!("metrics-seed{k}.csv"));
            let mut log = CsvLog::create(&path, &AGENT_HEADER)?;
            let mut write_err = None;
            let trained = run_agent(&cfg, data, &morse_cache[&key], dynamics.as_ref(), &mut |r| {
                if let Err(e) = log.agent_row(r) {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
            summary.returns.push(final_return(&trained.metrics).unwrap_or(f64::NAN));
            if let Some(last) = trained.metrics.last() {
                summary.rollout_lengths.push(last.mean_rollout_len);
            }
        }
    }

    let mut table = CsvLog::create(
        &out.join("summary.csv"),
        &["cell", "param", "value", "seeds", "mean_return", "std_return", "mean_rollout_len"],
    )?;
    for s in &summaries {
        let (m, sd) = mean_std(&s.returns);
        let (len, _) = mean_std(&s.rollout_lengths);
        let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        table.row([
            s.name.clone(),
            s.param.to_string(),
            s.value.clone(),
            s.returns.len().to_string(),
            num(m),
            num(sd),
            num(len),
        ])?;
    }
    Ok(summaries)
}
