//! Experiment runner for `fedskew`: JSON configs in, CSV and JSON artifacts out.
//!
//! Every seed in a run is derived from the config's `global_seed` by
//! component name, so identical configs produce byte-identical outputs.

pub mod commands;
pub mod config;
mod error;
pub mod experiment;

use std::path::{Path, PathBuf};

pub use commands::{run, Command, Outcome};
pub use config::{DerivedSeeds, ExperimentConfig, ResolvedConfig};
pub use error::{exit, CliError, Result};

/// Loads, resolves and runs a config file; `out` and `seed` override the
/// config's output directory and global seed.
pub fn run_file(cmd: Command, config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    run(cmd, &cfg.resolve(seed)?)
}
