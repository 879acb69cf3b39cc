//! CSV outputs. Every writer flushes after each row so a killed run leaves a
//! readable prefix behind.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use momo_core::agent::MetricsRow;
use momo_core::dynamics::DynamicsLogEntry;
use momo_core::morse::{GridCell, MorseLogEntry};

pub const AGENT_HEADER: [&str; 6] = [
    "step",
    "critic_loss",
    "actor_loss",
    "mean_log_certainty",
    "mean_rollout_len",
    "eval_return",
];

/// Empty cell for values that were not measured.
fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub struct CsvLog<W: Write> {
    inner: csv::Writer<W>,
}

impl CsvLog<File> {
    pub fn create(path: &Path, header: &[&str]) -> csv::Result<Self> {
        Self::new(File::create(path)?, header)
    }
}

impl<W: Write> CsvLog<W> {
    pub fn new(w: W, header: &[&str]) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> csv::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn agent_row(&mut self, r: &MetricsRow) -> csv::Result<()> {
        self.row([
            r.step.to_string(),
            cell(r.critic_loss),
            cell(r.actor_loss),
            cell(r.mean_log_certainty),
            cell(r.mean_rollout_len),
            r.eval_return.map(cell).unwrap_or_default(),
        ])
    }

    pub fn morse_row(&mut self, e: &MorseLogEntry) -> csv::Result<()> {
        self.row([
            e.step.to_string(),
            cell(e.loss),
            cell(e.positive),
            cell(e.negative),
            cell(e.penalty),
        ])
    }

    pub fn dynamics_row(&mut self, e: &DynamicsLogEntry) -> csv::Result<()> {
        self.row([e.step.to_string(), cell(e.train_nll), cell(e.validation_nll)])
    }
}

pub const MORSE_HEADER: [&str; 5] = ["step", "loss", "positive", "negative", "penalty"];
pub const DYNAMICS_HEADER: [&str; 3] = ["step", "train_nll", "validation_nll"];

pub fn write_density_grid<W: Write>(w: W, cells: &[GridCell]) -> csv::Result<()> {
    let mut log = CsvLog::new(w, &["a1", "a2", "certainty"])?;
    for c in cells {
        log.row([format!("{:.16e}", c.a1), format!("{:.16e}", c.a2), format!("{:.16e}", c.certainty)])?;
    }
    Ok(())
}

/// Last evaluation return in a metrics log.
pub fn final_return(rows: &[MetricsRow]) -> Option<f64> {
    rows.iter().rev().find_map(|r| r.eval_return)
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
