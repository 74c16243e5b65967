//! Scenario configuration documents.
//!
//! A scenario is one JSON object: the model, one command, and the parameters
//! that command reads. Unknown keys are rejected. After parsing every default
//! is written back into the config, so the emitted manifest parses to the same
//! resolved config.
//!
//! ```json
//! {
//!   "model": {
//!     "dim": 1,
//!     "drift_0": {"family": "InverseRadial", "rho": 2, "sign": -1, "cap": 1},
//!     "drift_1": {"family": "InverseRadial", "rho": 1, "sign": 1, "cap": 1},
//!     "intensity_0": {"family": "Constant", "lambda": 0.5},
//!     "intensity_1": {"family": "Constant", "lambda": 2},
//!     "diffusion": {"family": "UnitMatrix"}
//!   },
//!   "command": "hit",
//!   "x0": [10], "z0": 0, "m1": 2, "n_paths": 2000
//! }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use switchdiff_core::estimate::Start;
use switchdiff_core::{build_model, ModelSpec, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Criterion,
    Simulate,
    Hit,
    Sweep,
    Drift,
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Explicit censoring time for hitting runs; otherwise `max_time_factor · C_z(|x0|² + 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Start>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_RECORD_STRIDE: usize = 1;
pub const DEFAULT_MAX_TIME_FACTOR: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("config: {0}")]
    Syntax(String),
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// A validated config and the names of the fields that were filled by defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ScenarioConfig,
    pub defaults_applied: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() || path == "." {
            ConfigError::Syntax(inner.to_string())
        } else {
            ConfigError::Field {
                field: path,
                message: inner.to_string(),
            }
        }
    })?;
    let mut applied = Vec::new();
    config.apply_defaults(&mut applied);
    config.validate()?;
    Ok(ParsedConfig {
        config,
        defaults_applied: applied,
    })
}

fn fill<T>(slot: &mut Option<T>, value: T, name: &str, applied: &mut Vec<String>) {
    if slot.is_none() {
        *slot = Some(value);
        applied.push(name.to_string());
    }
}

impl ScenarioConfig {
    fn apply_defaults(&mut self, applied: &mut Vec<String>) {
        fill(&mut self.dt, DEFAULT_DT, "dt", applied);
        fill(&mut self.seed, DEFAULT_SEED, "seed", applied);
        fill(&mut self.record_stride, DEFAULT_RECORD_STRIDE, "record_stride", applied);
        match self.command {
            Command::Criterion => {}
            Command::Simulate => {
                fill(&mut self.z0, Regime::Zero, "z0", applied);
                fill(&mut self.horizon, 10.0, "horizon", applied);
                fill(&mut self.n_paths, 1, "n_paths", applied);
            }
            Command::Hit => {
                fill(&mut self.z0, Regime::Zero, "z0", applied);
                fill(&mut self.n_paths, 1000, "n_paths", applied);
                if self.max_time.is_none() {
                    fill(&mut self.max_time_factor, DEFAULT_MAX_TIME_FACTOR, "max_time_factor", applied);
                }
            }
            Command::Sweep => {
                fill(&mut self.n_paths, 1000, "n_paths", applied);
                if self.max_time.is_none() {
                    fill(&mut self.max_time_factor, DEFAULT_MAX_TIME_FACTOR, "max_time_factor", applied);
                }
            }
            Command::Drift => {
                fill(&mut self.z0, Regime::Zero, "z0", applied);
                fill(&mut self.n_paths, 5000, "n_paths", applied);
                fill(&mut self.horizon, 1000.0, "horizon", applied);
            }
            Command::Invariant => {
                fill(&mut self.z0, Regime::Zero, "z0", applied);
                fill(&mut self.horizon, 1e4, "horizon", applied);
                fill(&mut self.burn_in, 1e3, "burn_in", applied);
                fill(&mut self.bins, 24, "bins", applied);
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        build_model(&self.model).map_err(|e| match e {
            switchdiff_core::Error::ParameterRange { field, reason } => {
                ConfigError::field(&format!("model.{field}"), reason)
            }
            other => ConfigError::field("model", other.to_string()),
        })?;
        let dim = self.model.dim;
        let dt = self.dt.unwrap_or(DEFAULT_DT);
        positive("dt", Some(dt))?;
        if self.record_stride == Some(0) {
            return Err(ConfigError::field("record_stride", "must be ≥ 1"));
        }
        positive("m1", self.m1)?;
        positive("horizon", self.horizon)?;
        positive("max_time", self.max_time)?;
        positive("max_time_factor", self.max_time_factor)?;
        if let Some(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(ConfigError::field("eps", format!("must be > 0, got {e}")));
            }
        }
        if let Some(h) = self.horizon {
            if h < dt {
                return Err(ConfigError::field("horizon", format!("must be ≥ dt = {dt}")));
            }
        }
        if let Some(x0) = &self.x0 {
            check_point("x0", x0, dim)?;
        }
        if self.n_paths == Some(0) {
            return Err(ConfigError::field("n_paths", "must be ≥ 1"));
        }
        if self.bins == Some(0) {
            return Err(ConfigError::field("bins", "must be ≥ 1"));
        }
        if let Some(b) = self.burn_in {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(ConfigError::field("burn_in", format!("must be ≥ 0, got {b}")));
            }
            if let Some(h) = self.horizon {
                if b >= h {
                    return Err(ConfigError::field("burn_in", "must be below horizon"));
                }
            }
        }
        let need = |name: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(ConfigError::field(
                    name,
                    format!("required by command `{}`", self.command_name()),
                ))
            }
        };
        match self.command {
            Command::Criterion => {}
            Command::Simulate => need("x0", self.x0.is_some())?,
            Command::Hit | Command::Drift | Command::Invariant => {
                need("x0", self.x0.is_some())?;
                need("m1", self.m1.is_some())?;
            }
            Command::Sweep => {
                need("m1", self.m1.is_some())?;
                let starts = self.starts.as_ref().ok_or_else(|| {
                    ConfigError::field("starts", "required by command `sweep`")
                })?;
                if starts.is_empty() {
                    return Err(ConfigError::field("starts", "must not be empty"));
                }
                for (i, s) in starts.iter().enumerate() {
                    check_point(&format!("starts[{i}].x0"), &s.x0, dim)?;
                }
            }
        }
        Ok(())
    }

    pub fn command_name(&self) -> &'static str {
        match self.command {
            Command::Criterion => "criterion",
            Command::Simulate => "simulate",
            Command::Hit => "hit",
            Command::Sweep => "sweep",
            Command::Drift => "drift",
            Command::Invariant => "invariant",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn positive(field: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(ConfigError::field(
            field,
            format!("must be finite and > 0, got {x}"),
        )),
        _ => Ok(()),
    }
}

fn check_point(field: &str, x: &[f64], dim: usize) -> Result<(), ConfigError> {
    if x.len() != dim {
        return Err(ConfigError::field(
            field,
            format!("expected {dim} components, got {}", x.len()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::field(field, "components must be finite"));
    }
    Ok(())
}
