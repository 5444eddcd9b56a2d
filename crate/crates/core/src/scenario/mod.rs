//! Scenario files, built-in experiments, and run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, Weights};
use crate::error::{ensure, ValidationError};
use crate::model::ModelParams;
use crate::priority::PriorityParams;
use crate::solver::AlmSettings;
use crate::swarm::{simulate, AgentSpec, BudgetClock, EstimatorConfig, Integrator, NonCooperativeAgent, RunLog, SimError, SimSettings};

mod builtin;
mod output;

pub use builtin::{builtin, builtin_names, BUILTINS};
pub use output::{read_run, write_run, RunSummary, TargetError, CONFIG_FILE, SELECTIONS_FILE, SERIES_FILE, SUMMARY_FILE, TIMING_FILE, TRAJECTORY_FILE};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
    #[error("unknown built-in scenario `{0}`")]
    UnknownBuiltin(String),
}

impl From<SimError> for ScenarioError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ScenarioInvalid(v) => ScenarioError::Invalid(v),
        }
    }
}

fn default_controller() -> ControllerConfig<f64> {
    ControllerConfig::default()
}

fn default_u_min() -> [f64; 3] {
    default_controller().u_min
}

fn default_u_max() -> [f64; 3] {
    default_controller().u_max
}

fn default_n_obs() -> usize {
    default_controller().n_obs
}

fn default_plant_dt() -> f64 {
    SimSettings::<f64>::default().plant_dt
}

fn default_nominal_iteration_time() -> f64 {
    SimSettings::<f64>::default().nominal_iteration_time
}

fn default_radius() -> f64 {
    SimSettings::<f64>::default().radius
}

/// A complete experiment description. Every tuning value is optional in the
/// file and defaults to the reference configuration.
///
/// `priority.n_obs` and `priority.horizon` are ignored; the run uses `n_obs`
/// and `model.horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub agents: Vec<AgentSpec<f64>>,
    #[serde(default)]
    pub non_cooperative: Vec<NonCooperativeAgent<f64>>,
    #[serde(default)]
    pub model: ModelParams<f64>,
    #[serde(default)]
    pub weights: Weights<f64>,
    #[serde(default)]
    pub solver: AlmSettings<f64>,
    #[serde(default)]
    pub priority: PriorityParams<f64>,
    #[serde(default)]
    pub estimator: EstimatorConfig<f64>,
    #[serde(default = "default_u_min")]
    pub u_min: [f64; 3],
    #[serde(default = "default_u_max")]
    pub u_max: [f64; 3],
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    /// Keep-out radius of cooperative agents, m.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_plant_dt")]
    pub plant_dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub budget_clock: BudgetClock,
    #[serde(default = "default_nominal_iteration_time")]
    pub nominal_iteration_time: f64,
}

impl ScenarioConfig {
    /// A config with reference tuning and the given population.
    pub fn new(name: &str, duration: f64, agents: Vec<AgentSpec<f64>>) -> Self {
        Self {
            name: name.to_owned(),
            description: String::new(),
            duration,
            seed: 0,
            agents,
            non_cooperative: Vec::new(),
            model: ModelParams::default(),
            weights: Weights::default(),
            solver: AlmSettings::default(),
            priority: PriorityParams::default(),
            estimator: EstimatorConfig::default(),
            u_min: default_u_min(),
            u_max: default_u_max(),
            n_obs: default_n_obs(),
            radius: default_radius(),
            plant_dt: default_plant_dt(),
            integrator: Integrator::default(),
            budget_clock: BudgetClock::default(),
            nominal_iteration_time: default_nominal_iteration_time(),
        }
    }

    pub fn settings(&self) -> SimSettings<f64> {
        SimSettings {
            controller: ControllerConfig {
                model: self.model,
                weights: self.weights,
                solver: self.solver,
                u_min: self.u_min,
                u_max: self.u_max,
                n_obs: self.n_obs,
            },
            priority: self.priority,
            estimator: self.estimator,
            plant_dt: self.plant_dt,
            integrator: self.integrator,
            radius: self.radius,
            seed: self.seed,
            budget_clock: self.budget_clock,
            nominal_iteration_time: self.nominal_iteration_time,
        }
    }

    /// Number of control periods in the run.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.model.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(self.duration >= 0.0 && self.duration.is_finite(), "duration", "must be non-negative")?;
        self.settings().validate()?;
        // Builds the world only to run the population checks.
        crate::swarm::SimWorld::new(self.settings(), self.agents.clone(), self.non_cooperative.clone())
            .map(|_| ())
            .map_err(|SimError::ScenarioInvalid(v)| v)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Seed and duration overrides from the command line.
    pub fn with_overrides(mut self, seed: Option<u64>, duration: Option<f64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = duration {
            self.duration = d;
        }
        self
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })?;
    let config = ScenarioConfig::from_json(&text).map_err(|source| ScenarioError::Parse { path: path.to_owned(), source })?;
    config.validate()?;
    Ok(config)
}

pub fn write_scenario(path: &Path, config: &ScenarioConfig) -> Result<(), ScenarioError> {
    fs::write(path, config.to_json()).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })
}

/// A built-in name or a path to a scenario file.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig, ScenarioError> {
    if let Some(config) = builtin(name_or_path) {
        return Ok(config);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        load_scenario(path)
    } else {
        Err(ScenarioError::UnknownBuiltin(name_or_path.to_owned()))
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunLog<f64>, ScenarioError> {
    config.validate()?;
    Ok(simulate(config.settings(), config.agents.clone(), config.non_cooperative.clone(), config.duration)?)
}
