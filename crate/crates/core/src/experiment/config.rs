use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Source;
use crate::engine::{SimConfig, DEFAULT_BATCHES, DEFAULT_SEED};
use crate::model::{validate_architecture, ArchitectureSpec, ModelError, PeParams};
use crate::stochastics::MomentPair;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MEASURED_CYCLES: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("architecture.{0}")]
    Architecture(#[from] ModelError),
    #[error("{context}: {source}")]
    Parameter { context: String, source: PathError },
    #[error("sweep.values: at least one value required")]
    EmptySweep,
    #[error("sim: {0}")]
    Sim(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("malformed parameter path {0:?} (expected <pe>.<field>[.mean|.second_moment])")]
    Malformed(String),
    #[error("no PE named {0:?}")]
    UnknownPe(String),
    #[error("unknown numeric field {field:?} of PE {pe:?}")]
    UnknownField { pe: String, field: String },
    #[error("PE {pe:?} has no {field} to modify")]
    Absent { pe: String, field: String },
    #[error("priority must be an integer, got {0}")]
    NonIntegerPriority(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulate,
    Oracle,
    Both,
}

impl Mode {
    pub fn sources(self) -> &'static [Source] {
        match self {
            Mode::Simulate => &[Source::Simulation],
            Mode::Oracle => &[Source::Oracle],
            Mode::Both => &[Source::Simulation, Source::Oracle],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    #[serde(default = "default_cycles")]
    pub measured_cycles: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Defaults to a ninth of the measured span, i.e. 10% of the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_cycles: Option<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_cycles() -> u64 {
    DEFAULT_MEASURED_CYCLES
}

fn default_batches() -> usize {
    DEFAULT_BATCHES
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            measured_cycles: DEFAULT_MEASURED_CYCLES,
            batches: DEFAULT_BATCHES,
            warmup_cycles: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl SimSettings {
    pub fn config(&self, seed: u64) -> SimConfig {
        let mut c = SimConfig::measured(self.measured_cycles, self.batches, seed);
        if let Some(w) = self.warmup_cycles {
            c.total_cycles = c.measured_cycles() + w;
            c.warmup_cycles = w;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// A named set of parameter overrides; one curve of a figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub label: String,
    #[serde(default)]
    pub set: BTreeMap<String, f64>,
    /// Figure ids (`fig5a`, ...) this series belongs to.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub figures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub architecture: ArchitectureSpec,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Series>,
    #[serde(default)]
    pub mode: Mode,
}

impl ExperimentPlan {
    pub fn single(architecture: ArchitectureSpec, sim: SimSettings, mode: Mode) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            description: None,
            architecture,
            sim,
            sweep: None,
            series: Vec::new(),
            mode,
        }
    }

    /// Checks the base architecture, the simulation settings and that every
    /// sweep and series path resolves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema_version });
        }
        validate_architecture(&self.architecture)?;
        self.sim.config(self.sim.seed).validate()?;
        if let Some(sweep) = &self.sweep {
            let first = *sweep.values.first().ok_or(ConfigError::EmptySweep)?;
            let mut probe = self.architecture.clone();
            apply_parameter(&mut probe, &sweep.parameter, first).map_err(|source| {
                ConfigError::Parameter { context: "sweep.parameter".into(), source }
            })?;
        }
        for (i, s) in self.series.iter().enumerate() {
            let mut probe = self.architecture.clone();
            for (path, &v) in &s.set {
                apply_parameter(&mut probe, path, v).map_err(|source| ConfigError::Parameter {
                    context: format!("series[{i}].set"),
                    source,
                })?;
            }
        }
        Ok(())
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentPlan, ConfigError> {
    let plan: ExperimentPlan = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    plan.validate()?;
    Ok(plan)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentPlan, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn plan_to_json(plan: &ExperimentPlan) -> String {
    serde_json::to_string_pretty(plan).expect("plans always serialise")
}

fn moment_slot<'a>(
    pe: &'a mut PeParams,
    name: &str,
) -> Option<&'a mut Option<MomentPair>> {
    match name {
        "connect" => Some(&mut pe.connect),
        "local_connect" => Some(&mut pe.local_connect),
        "global_connect" => Some(&mut pe.global_connect),
        _ => None,
    }
}

fn set_moment(m: &mut MomentPair, part: Option<&str>, value: f64) -> bool {
    match part {
        None | Some("mean") => m.mean = value,
        Some("second_moment") => m.second_moment = Some(value),
        _ => return false,
    }
    true
}

/// Sets a numeric PE field addressed as `<pe>.<field>[.<part>]`, for example
/// `PE1.connect.mean`, `PE22.local_prob` or `PE3.compute`.
pub fn apply_parameter(
    spec: &mut ArchitectureSpec,
    path: &str,
    value: f64,
) -> Result<(), PathError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.len() < 2 || parts.len() > 3 || parts.iter().any(|p| p.is_empty()) {
        return Err(PathError::Malformed(path.to_string()));
    }
    let (name, field, part) = (parts[0], parts[1], parts.get(2).copied());
    let pe = spec
        .pes
        .iter_mut()
        .find(|p| p.name == name)
        .ok_or_else(|| PathError::UnknownPe(name.to_string()))?;
    let unknown = || PathError::UnknownField { pe: name.to_string(), field: parts[1..].join(".") };
    match (field, part) {
        ("priority", None) => {
            if value.fract() != 0.0 {
                return Err(PathError::NonIntegerPriority(value));
            }
            pe.priority = value as i64;
        }
        ("local_prob", None) => pe.local_prob = Some(value),
        ("compute", part) => {
            if !set_moment(&mut pe.compute, part, value) {
                return Err(unknown());
            }
        }
        (slot, part) => {
            let m = moment_slot(pe, slot).ok_or_else(unknown)?;
            let m = m
                .as_mut()
                .ok_or_else(|| PathError::Absent { pe: name.to_string(), field: slot.to_string() })?;
            if !set_moment(m, part, value) {
                return Err(unknown());
            }
        }
    }
    Ok(())
}
