//! TOML experiment documents.
//!
//! ```toml
//! schema_version = 1
//! scenario = "example1"
//! study = "poc_in_N"
//! particle_counts = [16, 32]
//! proxy_count = 64
//! dt = "2^-6"
//! ```
//!
//! Step sizes and p-values accept plain numbers or `"2^-k"` strings. Unknown
//! keys are rejected. The echo written next to results is the fully resolved
//! document with every default materialized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{
    ExperimentConfig, HarnessError, StudyKind, DEFAULT_HORIZON, DEFAULT_REPETITIONS,
};
use crate::model::{DEFAULT_GAMMA, DEFAULT_TUPLE_BUDGET};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
#[error("config error{}: {message}", key.as_ref().map(|k| format!(" at `{k}`")).unwrap_or_default())]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(key: &str, message: impl Into<String>) -> Self {
        Self { key: Some(key.to_string()), message: message.into() }
    }
}

impl From<HarnessError> for ConfigError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config { key, message } => Self::at(key, message),
            other => Self { key: None, message: other.to_string() },
        }
    }
}

/// A number written either literally or as `"2^k"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Real {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Real {
    fn resolve(&self, key: &str) -> Result<f64, ConfigError> {
        match self {
            Real::Int(v) => Ok(*v as f64),
            Real::Float(v) => Ok(*v),
            Real::Text(s) => parse_power(s)
                .ok_or_else(|| ConfigError::at(key, format!("cannot read `{s}` as a number or `b^k`"))),
        }
    }
}

fn parse_power(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('^') {
        Some((base, exp)) => {
            let base: f64 = base.trim().parse().ok()?;
            let exp: i32 = exp.trim().parse().ok()?;
            Some(base.powi(exp))
        }
        None => s.parse().ok(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    scenario: String,
    d: Option<usize>,
    study: StudyKind,
    p_values: Option<Vec<Real>>,
    particle_counts: Option<Vec<usize>>,
    proxy_count: Option<usize>,
    dt: Option<Real>,
    dt_ladder: Option<Vec<Real>>,
    #[serde(rename = "T")]
    horizon: Option<Real>,
    seeds: Option<Vec<u64>>,
    repetitions: Option<usize>,
    output: Option<String>,
    gamma: Option<Real>,
    tuple_budget: Option<u64>,
    self_check: Option<bool>,
}

/// Validated experiment plus where its results go.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub experiment: ExperimentConfig,
    pub output: Option<String>,
}

fn reals(values: &[Real], key: &str) -> Result<Vec<f64>, ConfigError> {
    values.iter().map(|v| v.resolve(key)).collect()
}

/// Parses and validates an experiment document.
pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .map(str::to_string);
        ConfigError { key, message: e.to_string().trim().to_string() }
    })?;
    if let Some(v) = raw.schema_version {
        if v != SCHEMA_VERSION {
            return Err(ConfigError::at(
                "schema_version",
                format!("unsupported schema version {v} (this build reads {SCHEMA_VERSION})"),
            ));
        }
    }
    let d = raw.d.unwrap_or(1);
    let horizon = match &raw.horizon {
        Some(t) => t.resolve("T")?,
        None => DEFAULT_HORIZON,
    };
    let dt_ladder = match &raw.dt_ladder {
        Some(v) => reals(v, "dt_ladder")?,
        None => Vec::new(),
    };
    let dt = match (&raw.dt, raw.study) {
        (Some(v), _) => v.resolve("dt")?,
        (None, StudyKind::MomentAudit) if !dt_ladder.is_empty() => dt_ladder[0],
        (None, _) => return Err(ConfigError::at("dt", "required")),
    };
    let experiment = ExperimentConfig {
        scenario: raw.scenario,
        d,
        study: raw.study,
        p_values: match &raw.p_values {
            Some(v) => reals(v, "p_values")?,
            None => vec![2.0],
        },
        particle_counts: raw.particle_counts.unwrap_or_default(),
        proxy_count: raw.proxy_count,
        dt,
        dt_ladder,
        horizon,
        seeds: raw.seeds.unwrap_or_else(|| vec![0]),
        repetitions: raw.repetitions.unwrap_or(DEFAULT_REPETITIONS),
        gamma: match &raw.gamma {
            Some(g) => g.resolve("gamma")?,
            None => DEFAULT_GAMMA,
        },
        tuple_budget: raw.tuple_budget.unwrap_or(DEFAULT_TUPLE_BUDGET),
        self_check: raw.self_check.unwrap_or(false),
    };
    crate::model::build_scenario(&experiment.scenario, experiment.d).map_err(|e| match e {
        crate::model::ModelError::UnknownScenario(_) => ConfigError::at("scenario", e.to_string()),
        other => ConfigError::at("d", other.to_string()),
    })?;
    experiment.validate()?;
    Ok(ParsedConfig { experiment, output: raw.output })
}

#[derive(Serialize)]
struct EchoDocument<'a> {
    schema_version: u32,
    scenario: &'a str,
    d: usize,
    study: StudyKind,
    p_values: &'a [f64],
    particle_counts: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    proxy_count: Option<usize>,
    dt: f64,
    dt_ladder: &'a [f64],
    #[serde(rename = "T")]
    horizon: f64,
    seeds: &'a [u64],
    repetitions: usize,
    gamma: f64,
    tuple_budget: u64,
    self_check: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<&'a str>,
}

/// Fully resolved TOML document; floats are written in shortest round-trip form.
pub fn echo_config(parsed: &ParsedConfig) -> String {
    let e = &parsed.experiment;
    let doc = EchoDocument {
        schema_version: SCHEMA_VERSION,
        scenario: &e.scenario,
        d: e.d,
        study: e.study,
        p_values: &e.p_values,
        particle_counts: &e.particle_counts,
        proxy_count: e.proxy_count,
        dt: e.dt,
        dt_ladder: &e.dt_ladder,
        horizon: e.horizon,
        seeds: &e.seeds,
        repetitions: e.repetitions,
        gamma: e.gamma,
        tuple_budget: e.tuple_budget,
        self_check: e.self_check,
        output: parsed.output.as_deref(),
    };
    toml::to_string(&doc).expect("echo document is always representable")
}
