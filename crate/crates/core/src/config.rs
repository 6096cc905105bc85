//! Sectioned TOML run configuration.
//!
//! Every section is optional; missing keys take their defaults. Unknown
//! keys are rejected with the closest known key as a suggestion.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::initial::InitialData;
use crate::potentials::{
    truncate_potential, AssumptionReport, MobilitySpec, PotentialError, PotentialSpec,
    ProliferationFamily, ProliferationMode, ProliferationSpec, SamplingOptions,
};
use crate::solver::{ModelParams, RunOptions, SchemeOpts, TimeOrder};
use crate::spectral::{build_grid, Grid, GridError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: unknown {what} `{key}`{}", suggestion_text(.suggestion))]
    Unknown {
        line: usize,
        what: &'static str,
        key: String,
        suggestion: Option<String>,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{}{field}: {message}", line_prefix(.line))]
    Invalid {
        line: Option<usize>,
        field: String,
        message: String,
    },
}

fn suggestion_text(s: &Option<String>) -> String {
    match s {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}

fn line_prefix(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every random choice of a run.
    pub seed: u64,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub initial: InitialData,
    pub time: TimeConfig,
    pub output: OutputConfig,
    pub experiment: ExperimentSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            initial: InitialData::default().with_seed(0),
            time: TimeConfig::default(),
            output: OutputConfig::default(),
            experiment: ExperimentSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dims: usize,
    /// Defaults to `2 pi` per axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    /// Defaults to 64 points per axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            lengths: None,
            resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Quartic,
    /// Coefficients lowest degree first.
    Custom { psi0: Vec<f64>, lambda: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProliferationConfig {
    Constant { p0: f64 },
    Rational { p0: f64, delta: f64 },
    Polynomial { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub chi_phi: f64,
    pub chi_sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    /// Replace the convex part by its quadratic continuation outside
    /// `[-truncate, truncate]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
    pub potential: PotentialConfig,
    pub proliferation: ProliferationConfig,
    pub proliferation_mode: ProliferationMode,
    pub q: f64,
    pub mobility_m: MobilitySpec,
    pub mobility_n: MobilitySpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            chi_phi: 1.0,
            chi_sigma: 1.0,
            r1: None,
            r2: None,
            truncate: None,
            potential: PotentialConfig::Quartic,
            proliferation: ProliferationConfig::Constant { p0: 0.5 },
            proliferation_mode: ProliferationMode::P2,
            q: 1.0,
            mobility_m: MobilitySpec::Unit,
            mobility_n: MobilitySpec::Unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    pub guard: bool,
    pub max_retries: usize,
    pub order: TimeOrder,
    pub dealias: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_end: 5.0,
            dt: 1e-3,
            guard: true,
            max_retries: 20,
            order: TimeOrder::First,
            dealias: 1,
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Binary],
        }
    }
}

/// Knobs of the experiment commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub epsilon: f64,
    pub sample_times: Vec<f64>,
    pub velocity_tol: f64,
    pub stationary_tol: f64,
    /// Snapshot cadence (in steps) for the norm series.
    pub norm_every: usize,
    pub regularity_sanity: f64,
    pub galerkin_modes: usize,
    /// Mean of `phi + sigma` for the stationary commands; `None` takes it
    /// from the initial data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    pub sweep_seeds: usize,
    pub sweep_amplitude: f64,
    pub semigroup_modes: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            sample_times: vec![0.1, 0.5, 1.0],
            velocity_tol: 1e-6,
            stationary_tol: 1e-9,
            norm_every: 100,
            regularity_sanity: 1e3,
            galerkin_modes: 16,
            mass: None,
            sweep_seeds: 8,
            sweep_amplitude: 0.5,
            semigroup_modes: 64,
        }
    }
}

/// A parsed config together with the structural assumption report of its
/// model block.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub assumptions: AssumptionReport,
}

impl RunConfig {
    /// Fails only for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.grid
            .lengths
            .clone()
            .unwrap_or_else(|| vec![std::f64::consts::TAU; self.grid.dims])
    }

    pub fn resolution(&self) -> Vec<usize> {
        self.grid.resolution.clone().unwrap_or_else(|| vec![64; self.grid.dims])
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, GridError> {
        build_grid(self.grid.dims, &self.lengths(), &self.resolution())
    }

    pub fn initial_data(&self) -> InitialData {
        self.initial.with_seed(self.seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn potential(&self) -> Result<PotentialSpec, PotentialError> {
        let mut spec = match &self.model.potential {
            PotentialConfig::Quartic => PotentialSpec::quartic(),
            PotentialConfig::Custom { psi0, lambda } => PotentialSpec::custom(psi0.clone(), lambda.clone())?,
        };
        if let Some(c) = self.model.truncate {
            spec = truncate_potential(&spec, c)?;
        }
        if let Some(r1) = self.model.r1 {
            spec.r1 = r1;
        }
        if let Some(r2) = self.model.r2 {
            spec.r2 = Some(r2);
        }
        Ok(spec)
    }

    pub fn proliferation(&self) -> ProliferationSpec {
        let family = match &self.model.proliferation {
            ProliferationConfig::Constant { p0 } => ProliferationFamily::Constant { p0: *p0 },
            ProliferationConfig::Rational { p0, delta } => ProliferationFamily::RationalBump { p0: *p0, delta: *delta },
            ProliferationConfig::Polynomial { coefficients } => ProliferationFamily::Polynomial {
                coefficients: coefficients.clone(),
            },
        };
        ProliferationSpec {
            family,
            q: self.model.q,
            mode: self.model.proliferation_mode,
            c3: None,
            c4: None,
        }
    }

    /// Fails only on inconsistent potential input; call after [`parse_config`].
    pub fn params(&self) -> Result<ModelParams, PotentialError> {
        Ok(ModelParams {
            chi_phi: self.model.chi_phi,
            chi_sigma: self.model.chi_sigma,
            psi: self.potential()?,
            p: self.proliferation(),
            mobility_m: self.model.mobility_m,
            mobility_n: self.model.mobility_n,
        })
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            dt: self.time.dt,
            scheme: SchemeOpts {
                guard: self.time.guard,
                max_retries: self.time.max_retries,
                order: self.time.order,
                dealias: self.time.dealias,
                ..SchemeOpts::default()
            },
            snapshot_every: self.time.snapshot_every,
        }
    }
}

/// Line (1-based) of the first `key =` assignment in the text.
fn locate(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Pulls the offending name and the candidate list out of a serde
/// "unknown field" / "unknown variant" message.
fn parse_unknown(message: &str) -> Option<(&'static str, String, Vec<String>)> {
    let what = if message.starts_with("unknown field") {
        "key"
    } else if message.starts_with("unknown variant") {
        "value"
    } else {
        return None;
    };
    let mut ticks = message.split('`').skip(1).step_by(2).map(str::to_string);
    let key = ticks.next()?;
    Some((what, key, ticks.collect()))
}

fn suggest(key: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(key, c), c))
        .filter(|(score, _)| *score > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.clone())
}

fn invalid(text: &str, key: &str, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line: locate(text, key),
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
        let message = e.message().to_string();
        match parse_unknown(&message) {
            Some((what, key, candidates)) => ConfigError::Unknown {
                line,
                what,
                suggestion: suggest(&key, &candidates),
                key,
            },
            None => ConfigError::Syntax { line, message },
        }
    })?;
    let assumptions = validate(text, &config)?;
    Ok(LoadedConfig { config, assumptions })
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

fn validate(text: &str, c: &RunConfig) -> Result<AssumptionReport, ConfigError> {
    let m = &c.model;
    if !(m.chi_sigma > 0.0 && m.chi_sigma.is_finite()) {
        return Err(invalid(text, "chi_sigma", "model.chi_sigma", "chi_sigma must be positive (assumption A1)"));
    }
    if !(m.chi_phi >= 0.0 && m.chi_phi.is_finite()) {
        return Err(invalid(text, "chi_phi", "model.chi_phi", "chi_phi must be non-negative (assumption A1)"));
    }
    if !(m.q > 0.0) {
        return Err(invalid(text, "q", "model.q", "q must be positive"));
    }
    for (key, spec) in [("mobility_m", &m.mobility_m), ("mobility_n", &m.mobility_n)] {
        if let MobilitySpec::Bounded { m0, m1, .. } = *spec {
            if !(m0 > 0.0 && m1 > 0.0) {
                return Err(invalid(text, "m0", &format!("model.{key}"), "mobility bounds must be positive"));
            }
        }
    }
    c.build_grid().map_err(|e| invalid(text, "lengths", "grid", e.to_string()))?;
    let t = &c.time;
    if !(t.dt > 0.0 && t.dt.is_finite()) {
        return Err(invalid(text, "dt", "time.dt", "dt must be positive"));
    }
    if !(t.t_end > 0.0 && t.t_end.is_finite()) {
        return Err(invalid(text, "t_end", "time.t_end", "t_end must be positive"));
    }
    if t.dealias == 0 {
        return Err(invalid(text, "dealias", "time.dealias", "dealias factor must be at least 1"));
    }
    if t.snapshot_every == Some(0) {
        return Err(invalid(text, "snapshot_every", "time.snapshot_every", "snapshot cadence must be at least 1"));
    }
    let x = &c.experiment;
    if !(x.epsilon >= 0.0 && x.epsilon.is_finite()) {
        return Err(invalid(text, "epsilon", "experiment.epsilon", "epsilon must be non-negative"));
    }
    if x.sample_times.is_empty() || x.sample_times[0] <= 0.0 || x.sample_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(text, "sample_times", "experiment.sample_times", "sample times must be positive and increasing"));
    }
    if x.galerkin_modes == 0 || x.norm_every == 0 || x.semigroup_modes == 0 {
        return Err(invalid(text, "galerkin_modes", "experiment", "mode counts and cadences must be positive"));
    }
    let params = c
        .params()
        .map_err(|e| invalid(text, "kind", "model.potential", e.to_string()))?;
    Ok(params.validate(&SamplingOptions::default()))
}
