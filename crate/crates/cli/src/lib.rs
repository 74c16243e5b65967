//! Scenario runner for switching-diffusion experiments.
//!
//! A scenario file names a model and one command; [`run_scenario`] executes it
//! and writes `manifest.json` plus CSV artifacts into an output directory.

pub mod config;
pub mod run;

pub use config::{parse_config, Command, ConfigError, ParsedConfig, ScenarioConfig};
pub use run::{run_scenario, RunError, RunOptions, RunOutcome};
