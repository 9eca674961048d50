//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::evolution::EvolutionConfig;
use crate::memory::DEFAULT_EPSILONS;
use crate::model::{CounterTerm, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scenario {
    InitEq,
    SweepG,
    Quench,
    Validate,
    MemoryCheck,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::InitEq => "init-eq",
            Scenario::SweepG => "sweep-g",
            Scenario::Quench => "quench",
            Scenario::Validate => "validate",
            Scenario::MemoryCheck => "memory-check",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Scenario::InitEq,
            Scenario::SweepG,
            Scenario::Quench,
            Scenario::Validate,
            Scenario::MemoryCheck,
        ]
        .into_iter()
        .find(|sc| sc.name() == s)
        .ok_or_else(|| format!("unknown scenario '{s}'"))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub evolution: EvolutionConfig,
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    /// Largest coupling and spacing of the `sweep-g` grid, starting at 0.
    pub sweep_gbar_max: f64,
    pub sweep_gbar_step: f64,
    pub memory_epsilons: Vec<f64>,
    pub memory_k_points: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: key '{key}' already set on line {first}")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },

    #[error("line {line}: invalid value for '{key}': {message}")]
    Invalid {
        line: usize,
        key: String,
        message: String,
    },

    #[error("missing mandatory keys: {}", .0.join(", "))]
    Missing(Vec<String>),
}

pub const MANDATORY_KEYS: [&str; 5] = ["N_total", "beta", "Delta", "gbar_before", "gbar_after"];

const OPTIONAL_KEYS: [&str; 12] = [
    "dt",
    "t_max",
    "sc_tol",
    "sc_max_iter",
    "output_stride",
    "counter_term",
    "scenario",
    "output_dir",
    "sweep_gbar_max",
    "sweep_gbar_step",
    "memory_epsilons",
    "memory_k_points",
];

struct Entry {
    line: usize,
    value: String,
}

fn invalid(key: &str, line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn real(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| invalid(key, e.line, format!("'{}' is not a number", e.value)))?;
    if !v.is_finite() {
        return Err(invalid(key, e.line, "must be finite"));
    }
    Ok(v)
}

fn positive(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    let v = real(key, e)?;
    if v <= 0.0 {
        return Err(invalid(key, e.line, format!("must be positive, got {v}")));
    }
    Ok(v)
}

fn non_negative(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    let v = real(key, e)?;
    if v < 0.0 {
        return Err(invalid(
            key,
            e.line,
            format!("must be non-negative, got {v}"),
        ));
    }
    Ok(v)
}

fn count(key: &str, e: &Entry, min: usize) -> Result<usize, ConfigError> {
    let v: usize = e
        .value
        .parse()
        .map_err(|_| invalid(key, e.line, format!("'{}' is not a whole number", e.value)))?;
    if v < min {
        return Err(invalid(
            key,
            e.line,
            format!("must be at least {min}, got {v}"),
        ));
    }
    Ok(v)
}

/// Parses a configuration file. Physical keys are mandatory, everything else
/// falls back to its default.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: body.to_string(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: body.to_string(),
            });
        }
        if !MANDATORY_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some(first) = entries.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first: first.line,
            });
        }
        entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }

    let missing: Vec<String> = MANDATORY_KEYS
        .iter()
        .filter(|k| !entries.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let get = |k: &str| &entries[k];

    let params = ModelParams {
        n_total: positive("N_total", get("N_total"))?,
        beta: positive("beta", get("beta"))?,
        delta: positive("Delta", get("Delta"))?,
        gbar_before: non_negative("gbar_before", get("gbar_before"))?,
        gbar_after: non_negative("gbar_after", get("gbar_after"))?,
    };

    let mut evolution = EvolutionConfig::default();
    if let Some(e) = entries.get("dt") {
        evolution.dt = positive("dt", e)?;
    }
    if let Some(e) = entries.get("t_max") {
        evolution.t_max = non_negative("t_max", e)?;
    }
    if let Some(e) = entries.get("sc_tol") {
        evolution.sc_tol = positive("sc_tol", e)?;
    }
    if let Some(e) = entries.get("sc_max_iter") {
        evolution.sc_max_iter = count("sc_max_iter", e, 2)?;
    }
    if let Some(e) = entries.get("output_stride") {
        evolution.output_stride = count("output_stride", e, 1)?;
    }
    if let Some(e) = entries.get("counter_term") {
        evolution.counter_term = match e.value.as_str() {
            "full" => CounterTerm::Full,
            "diagonal" => CounterTerm::DiagonalOnly,
            other => {
                return Err(invalid(
                    "counter_term",
                    e.line,
                    format!("expected 'full' or 'diagonal', got '{other}'"),
                ))
            }
        };
    }

    let scenario = match entries.get("scenario") {
        Some(e) => e
            .value
            .parse()
            .map_err(|m: String| invalid("scenario", e.line, m))?,
        None => Scenario::Quench,
    };
    let output_dir = entries
        .get("output_dir")
        .map_or_else(|| PathBuf::from("output"), |e| PathBuf::from(&e.value));

    let sweep_gbar_max = match entries.get("sweep_gbar_max") {
        Some(e) => non_negative("sweep_gbar_max", e)?,
        None => 0.3,
    };
    let sweep_gbar_step = match entries.get("sweep_gbar_step") {
        Some(e) => positive("sweep_gbar_step", e)?,
        None => 0.05,
    };
    let memory_epsilons = match entries.get("memory_epsilons") {
        Some(e) => {
            let mut out = Vec::new();
            for part in e.value.split(',') {
                let v: f64 = part.trim().parse().map_err(|_| {
                    invalid(
                        "memory_epsilons",
                        e.line,
                        format!("'{}' is not a number", part.trim()),
                    )
                })?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(
                        "memory_epsilons",
                        e.line,
                        format!("must be positive, got {v}"),
                    ));
                }
                out.push(v);
            }
            if out.len() < 2 {
                return Err(invalid(
                    "memory_epsilons",
                    e.line,
                    "need at least two values",
                ));
            }
            out
        }
        None => DEFAULT_EPSILONS.to_vec(),
    };
    let memory_k_points = match entries.get("memory_k_points") {
        Some(e) => count("memory_k_points", e, 20)?,
        None => 2000,
    };

    Ok(RunConfig {
        params,
        evolution,
        scenario,
        output_dir,
        sweep_gbar_max,
        sweep_gbar_step,
        memory_epsilons,
        memory_k_points,
    })
}

impl RunConfig {
    /// Couplings `0, step, 2 step, …` up to `sweep_gbar_max`.
    pub fn gbar_grid(&self) -> Vec<f64> {
        let n = (self.sweep_gbar_max / self.sweep_gbar_step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.sweep_gbar_step).collect()
    }

    /// Fully resolved configuration in the input format; parsing it gives
    /// back `self`.
    pub fn render(&self) -> String {
        let p = &self.params;
        let e = &self.evolution;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("N_total", p.n_total.to_string());
        kv("beta", p.beta.to_string());
        kv("Delta", p.delta.to_string());
        kv("gbar_before", p.gbar_before.to_string());
        kv("gbar_after", p.gbar_after.to_string());
        kv("dt", e.dt.to_string());
        kv("t_max", e.t_max.to_string());
        kv("sc_tol", e.sc_tol.to_string());
        kv("sc_max_iter", e.sc_max_iter.to_string());
        kv("output_stride", e.output_stride.to_string());
        let ct = match e.counter_term {
            CounterTerm::Full => "full",
            CounterTerm::DiagonalOnly => "diagonal",
        };
        kv("counter_term", ct.to_string());
        kv("scenario", self.scenario.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("sweep_gbar_max", self.sweep_gbar_max.to_string());
        kv("sweep_gbar_step", self.sweep_gbar_step.to_string());
        let eps: Vec<String> = self.memory_epsilons.iter().map(|x| x.to_string()).collect();
        kv("memory_epsilons", eps.join(", "));
        kv("memory_k_points", self.memory_k_points.to_string());
        s
    }
}
