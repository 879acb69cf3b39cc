//! Files, configuration and the command-line pipeline around `momo-core`.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod format;
pub mod metrics;
pub mod pipeline;
