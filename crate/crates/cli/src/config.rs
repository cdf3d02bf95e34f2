//! Experiment configuration: JSON in, validated and fully resolved struct out.

use std::path::{Path, PathBuf};

use hinfopt::hinf::HinfOptions;
use hinfopt::optimizer::StepSchedule;
use hinfopt::plant::{PlantData, ScanBox};
use hinfopt::{builtin_example, ExampleName, Plant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Validate,
    Norm,
    Grad,
    Optimize,
    Landscape,
    Certify,
    Reproduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    WeakConvexity,
    Lipschitz,
    WeakPl,
    Saddle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Builtin { name: ExampleName, alpha: Option<f64> },
    Inline(PlantData),
}

impl PlantSpec {
    pub fn build(&self) -> hinfopt::Result<Plant> {
        match self {
            Self::Builtin { name, alpha } => builtin_example(*name, *alpha).map(|(p, _)| p),
            Self::Inline(data) => Plant::from_data(data),
        }
    }

    pub fn builtin_name(&self) -> Option<ExampleName> {
        match self {
            Self::Builtin { name, .. } => Some(*name),
            Self::Inline(_) => None,
        }
    }
}

/// A validated configuration with every default filled in. This is what
/// reports echo back.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub plant: PlantSpec,
    #[serde(rename = "K0", skip_serializing_if = "Option::is_none")]
    pub k0: Option<Vec<Vec<f64>>>,
    pub schedule: StepSchedule,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub rho: Option<f64>,
    pub m_hat: Option<f64>,
    pub log_moreau_every: usize,
    pub divergence_cap: f64,
    #[serde(rename = "box")]
    pub scan_box: Option<ScanBox>,
    pub resolution: usize,
    pub evaluate_cost: bool,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub nu: Option<f64>,
    pub n_segments: usize,
    pub n_points: usize,
    pub n_samples: usize,
    pub probes: Vec<Probe>,
    pub hinf: HinfOptions,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

const KEYS: &[&str] = &[
    "task",
    "plant",
    "alpha",
    "K0",
    "schedule",
    "T",
    "rho",
    "m_hat",
    "log_moreau_every",
    "divergence_cap",
    "box",
    "resolution",
    "evaluate_cost",
    "gamma",
    "seed",
    "nu",
    "n_segments",
    "n_points",
    "n_samples",
    "probes",
    "hinf",
    "output_dir",
    "threads",
];

pub const DEFAULT_HORIZON: usize = 1000;
/// Horizon used by `reproduce`.
pub const REPRODUCE_HORIZON: usize = 200_000;
pub const REPRODUCE_MOREAU_EVERY: usize = 5000;

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema { pointer: pointer.into(), message: message.into() }
}

/// Reads a config file and validates it.
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&text)
}

/// Parses inline JSON text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| schema("", format!("invalid JSON: {e}")))?;
    parse_config_value(&value)
}

struct Fields<'a>(&'a Map<String, Value>);

impl<'a> Fields<'a> {
    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| schema(format!("/{key}"), e.to_string())),
        }
    }
}

fn positive(key: &str, x: Option<f64>) -> Result<Option<f64>, CliError> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(schema(format!("/{key}"), format!("must be positive, got {v}"))),
        _ => Ok(x),
    }
}

fn at_least(key: &str, x: usize, min: usize) -> Result<usize, CliError> {
    if x < min {
        return Err(schema(format!("/{key}"), format!("must be at least {min}, got {x}")));
    }
    Ok(x)
}

/// Validates an already-parsed JSON value.
pub fn parse_config_value(value: &Value) -> Result<ExperimentConfig, CliError> {
    let obj = value.as_object().ok_or_else(|| schema("", "config must be a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(schema(format!("/{k}"), format!("unknown key `{k}`")));
    }
    let f = Fields(obj);

    let task: Task = f.get("task")?.ok_or_else(|| schema("/task", "missing required key"))?;
    let alpha: Option<f64> = f.get("alpha")?;
    let plant = match obj.get("plant") {
        None | Some(Value::Null) => return Err(schema("/plant", "missing required key")),
        Some(Value::String(s)) => {
            let name: ExampleName = s.parse().map_err(|e: hinfopt::Error| schema("/plant", e.to_string()))?;
            if name == ExampleName::Example3 && alpha.is_none() {
                return Err(schema("/alpha", "example3 requires `alpha`"));
            }
            PlantSpec::Builtin { name, alpha }
        }
        Some(v @ Value::Object(_)) => {
            let data: PlantData = serde_json::from_value(v.clone()).map_err(|e| schema("/plant", e.to_string()))?;
            PlantSpec::Inline(data)
        }
        Some(_) => return Err(schema("/plant", "expected a builtin name or an inline plant object")),
    };
    let built = plant.build().map_err(|e| schema("/plant", e.to_string()))?;
    let dims = built.dims();

    let k0: Option<Vec<Vec<f64>>> = f.get("K0")?;
    if let Some(k) = &k0 {
        let ok = k.len() == dims.nu && k.iter().all(|r| r.len() == dims.ny && r.iter().all(|x| x.is_finite()));
        if !ok {
            return Err(schema("/K0", format!("expected a finite {}x{} matrix", dims.nu, dims.ny)));
        }
    }
    let needs_k0 = matches!(task, Task::Norm | Task::Grad | Task::Optimize | Task::Certify);
    if needs_k0 && k0.is_none() {
        return Err(schema("/K0", format!("task `{}` requires K0", task_name(task))));
    }

    let reproduce = task == Task::Reproduce;
    if reproduce && plant.builtin_name().is_none_or(|n| n == ExampleName::Example1) {
        return Err(schema("/plant", "reproduce is defined for example2 and example3"));
    }
    let horizon = at_least(
        "T",
        f.get("T")?.unwrap_or(if reproduce { REPRODUCE_HORIZON } else { DEFAULT_HORIZON }),
        1,
    )?;
    let schedule: StepSchedule = f.get("schedule")?.unwrap_or(StepSchedule::Constant { alpha: 1e-3 });
    schedule.validate().map_err(|e| schema("/schedule", e.to_string()))?;

    let rho = positive("rho", f.get("rho")?)?;
    let m_hat: Option<f64> = f.get("m_hat")?;
    if let Some(m) = m_hat {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(schema("/m_hat", format!("must be finite and nonnegative, got {m}")));
        }
    }
    let default_every = if reproduce && plant.builtin_name() == Some(ExampleName::Example2) {
        REPRODUCE_MOREAU_EVERY
    } else {
        0
    };
    let log_moreau_every = f.get("log_moreau_every")?.unwrap_or(default_every);
    let divergence_cap = positive("divergence_cap", f.get("divergence_cap")?)?.unwrap_or(1e8);

    let scan_box: Option<ScanBox> = f.get("box")?;
    if let Some(b) = &scan_box {
        let entries = dims.nu * dims.ny;
        if b.lo.len() != b.hi.len() || b.lo.len() != entries || b.lo.iter().zip(&b.hi).any(|(l, h)| !(l < h)) {
            return Err(schema("/box", format!("expected lo < hi with {entries} entries each")));
        }
    }
    let resolution = at_least("resolution", f.get("resolution")?.unwrap_or(400), 2)?;
    let evaluate_cost = f.get("evaluate_cost")?.unwrap_or(true);
    let gamma = positive("gamma", f.get("gamma")?)?;
    if task == Task::Certify && gamma.is_none() {
        return Err(schema("/gamma", "task `certify` requires gamma"));
    }
    let nu = positive("nu", f.get("nu")?)?;
    let probes: Vec<Probe> = f.get("probes")?.unwrap_or_default();
    if probes.iter().any(|p| matches!(p, Probe::WeakConvexity | Probe::Lipschitz | Probe::WeakPl)) && nu.is_none() {
        return Err(schema("/nu", "sublevel-set probes require nu"));
    }
    let threads: Option<usize> = f.get("threads")?;
    if let Some(t) = threads {
        at_least("threads", t, 1)?;
    }
    let hinf: HinfOptions = f.get("hinf")?.unwrap_or_default();
    at_least("hinf/grid_size", hinf.grid_size, 8)?;

    Ok(ExperimentConfig {
        task,
        plant,
        k0,
        schedule,
        horizon,
        rho,
        m_hat,
        log_moreau_every,
        divergence_cap,
        scan_box,
        resolution,
        evaluate_cost,
        gamma,
        seed: f.get("seed")?.unwrap_or(0),
        nu,
        n_segments: at_least("n_segments", f.get("n_segments")?.unwrap_or(200), 1)?,
        n_points: at_least("n_points", f.get("n_points")?.unwrap_or(21), 3)?,
        n_samples: at_least("n_samples", f.get("n_samples")?.unwrap_or(200), 1)?,
        probes,
        hinf,
        output_dir: f.get("output_dir")?.unwrap_or_else(|| PathBuf::from("out")),
        threads,
    })
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Validate => "validate",
        Task::Norm => "norm",
        Task::Grad => "grad",
        Task::Optimize => "optimize",
        Task::Landscape => "landscape",
        Task::Certify => "certify",
        Task::Reproduce => "reproduce",
    }
}

/// Writes `value` at `key` in the top-level object, creating it if needed.
/// Used to layer command-line flags over the config file.
pub fn set_override(config: &mut Value, key: &str, value: Value) {
    if !config.is_object() {
        *config = Value::Object(Map::new());
    }
    if let Some(obj) = config.as_object_mut() {
        obj.insert(key.to_string(), value);
    }
}
