//! Experiment configuration: one JSON document per run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;

use obslab::family::Family;
use obslab::sets::{CellGrid, IntervalSet, SpaceTimeSet};
use obslab::spectral::EvolutionSpec;

pub const MAX_TRUNCATION: usize = 64;
pub const MAX_HORIZON: f64 = 10.0;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub spec: EvolutionSpec,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub sets: BTreeMap<String, SetDescriptor>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub analyticity: AnalyticityConfig,
    pub smallness: Option<SmallnessConfig>,
    pub observability: Option<ObservabilityConfig>,
    pub control: Option<ControlConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A named set. `omega`/`times` of a product name another `intervals` entry
/// or hold a literal `"lo-hi,lo-hi"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDescriptor {
    Intervals { value: String },
    Product { omega: String, times: String },
    Cells { nx: usize, nt: usize, rle: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub hum_residual: f64,
    pub time_rel_width: f64,
    pub horizon_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hum_residual: 1e-3,
            time_rel_width: 1e-3,
            horizon_cap: MAX_HORIZON,
        }
    }
}

/// Initial coefficients: explicit, or `"random"` (unit sphere, seeded).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Coeffs(Vec<f64>),
    Named(String),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named("random".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub initial: InitialState,
    pub steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            initial: InitialState::default(),
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticityConfig {
    pub states: usize,
    pub t_min: f64,
    pub t_points: usize,
    pub alpha_max: usize,
    pub p_max: usize,
}

impl Default for AnalyticityConfig {
    fn default() -> Self {
        Self {
            states: 40,
            t_min: 0.05,
            t_points: 8,
            alpha_max: 8,
            p_max: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallnessConfig {
    pub family: Family,
    pub omega: String,
    /// Defaults to the whole domain.
    pub domain: Option<(f64, f64)>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Telescoping,
    Empirical,
    Both,
    Boundary,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Space-time set for interior observation.
    pub set: Option<String>,
    /// Time set shared by both endpoints for boundary observation.
    pub boundary_times: Option<String>,
    #[serde(default = "default_validation")]
    pub validation: usize,
    #[serde(default = "default_fit_states")]
    pub fit_states: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_method() -> Method {
    Method::Both
}

fn default_validation() -> usize {
    10_000
}

fn default_fit_states() -> usize {
    40
}

fn default_restarts() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Hum,
    TimeOptimal,
    Coupled,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub mode: ControlMode,
    /// Space-time set for `hum` and `coupled`.
    pub set: Option<String>,
    /// Control region for `time_optimal`.
    pub omega: Option<String>,
    #[serde(default = "default_bounds", rename = "M")]
    pub bounds: Vec<f64>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default = "default_coupled_validation")]
    pub validation: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_bounds() -> Vec<f64> {
    vec![1.0]
}

fn default_coupled_validation() -> usize {
    1000
}

/// Field-level validation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses JSON; syntax and type errors carry line and column.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            err(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.k > MAX_TRUNCATION {
            return Err(err("K", format!("must be in 1..={MAX_TRUNCATION}, got {}", self.k)));
        }
        if !(self.horizon > 0.0 && self.horizon <= MAX_HORIZON) {
            return Err(err("T", format!("must be in (0, {MAX_HORIZON}], got {}", self.horizon)));
        }
        match &self.spec {
            EvolutionSpec::PurePower { m, length } => {
                if !(*m == 1 || *m == 2) {
                    return Err(err("spec.m", format!("must be 1 or 2, got {m}")));
                }
                if !(*length > 0.0) {
                    return Err(err("spec.length", "must be positive"));
                }
            }
            EvolutionSpec::Coupled2 { length, .. } => {
                if !(*length > 0.0) {
                    return Err(err("spec.length", "must be positive"));
                }
            }
        }
        for name in self.sets.keys() {
            self.resolve_set(name)?;
        }
        if let Some(s) = &self.smallness {
            self.interval_set(&s.omega, "smallness.omega")?;
        }
        if let Some(o) = &self.observability {
            if let Some(s) = &o.set {
                self.space_time_set(s, "observability.set")?;
            }
            if let Some(s) = &o.boundary_times {
                self.interval_set(s, "observability.boundary_times")?;
            }
        }
        if let Some(c) = &self.control {
            if let Some(s) = &c.set {
                self.space_time_set(s, "control.set")?;
            }
            if let Some(s) = &c.omega {
                self.interval_set(s, "control.omega")?;
            }
            if c.bounds.is_empty() || c.bounds.iter().any(|m| !(*m > 0.0)) {
                return Err(err("control.M", "bounds must be positive"));
            }
        }
        Ok(())
    }

    fn resolve_set(&self, name: &str) -> Result<(), ConfigError> {
        let field = format!("sets.{name}");
        match &self.sets[name] {
            SetDescriptor::Intervals { .. } => self.interval_set(name, &field).map(|_| ()),
            _ => self.space_time_set(name, &field).map(|_| ()),
        }
    }

    /// A named `intervals` entry or a literal.
    pub fn interval_set(&self, reference: &str, field: &str) -> Result<IntervalSet, ConfigError> {
        match self.sets.get(reference) {
            Some(SetDescriptor::Intervals { value }) => value.parse().map_err(|e: obslab::Error| err(field, e.to_string())),
            Some(_) => Err(err(field, format!("set {reference:?} is not an interval set"))),
            None => reference
                .parse()
                .map_err(|e: obslab::Error| err(field, format!("unknown set {reference:?} ({e})"))),
        }
    }

    pub fn space_time_set(&self, reference: &str, field: &str) -> Result<SpaceTimeSet, ConfigError> {
        match self.sets.get(reference) {
            Some(SetDescriptor::Product { omega, times }) => {
                let omega = self.interval_set(omega, &format!("{field}.omega"))?;
                let times = self.interval_set(times, &format!("{field}.times"))?;
                if !omega.within(0.0, self.spec.length()) {
                    return Err(err(format!("{field}.omega"), "must lie inside the domain"));
                }
                if !times.within(0.0, self.horizon) {
                    return Err(err(format!("{field}.times"), "must lie inside (0, T)"));
                }
                Ok(SpaceTimeSet::product(omega, times))
            }
            Some(SetDescriptor::Cells { nx, nt, rle }) => {
                CellGrid::from_rle(*nx, *nt, self.spec.length(), self.horizon, rle)
                    .map(SpaceTimeSet::CellGrid)
                    .map_err(|e| err(field, e.to_string()))
            }
            Some(SetDescriptor::Intervals { .. }) => Err(err(field, format!("set {reference:?} is not a space-time set"))),
            None => Err(err(field, format!("unknown set {reference:?}"))),
        }
    }
}
