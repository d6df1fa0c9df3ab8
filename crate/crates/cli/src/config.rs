//! Run configuration: one JSON file per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use ntvcbf::dynamics::{BoxSet, DynamicsBounds, SystemModel};
use ntvcbf::neural::Architecture;
use ntvcbf::safeset::SampleGrid;
use ntvcbf::sim::InputHold;
use ntvcbf::stl::{self, ensure_coverage, IntervalPolicy, Specification};
use ntvcbf::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub spec: SpecSource,
    #[serde(default)]
    pub horizon: Option<f64>,
    pub grid: GridConfig,
    #[serde(default)]
    pub interval_policy: IntervalPolicy,
    pub nets: NetsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemConfig {
    Builtin(String),
    Detailed(SystemSection),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub linear: Option<LinearSection>,
    #[serde(default)]
    pub state_box: Option<BoxSet>,
    #[serde(default)]
    pub input_box: Option<BoxSet>,
    #[serde(default)]
    pub bounds: Option<DynamicsBounds>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    Inline(String),
    File { file: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub epsilon: f64,
    /// Separate spacing for the time axis.
    #[serde(default)]
    pub time_spacing: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetsConfig {
    pub barrier: Architecture,
    pub controller: Architecture,
    #[serde(default)]
    pub seed: u64,
}

fn d_dt() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    /// Rollout length; the specification horizon when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub zero_order_hold: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            initial_states: Vec::new(),
            horizon: None,
            zero_order_hold: false,
        }
    }
}

impl SimConfig {
    pub fn hold(&self) -> InputHold {
        if self.zero_order_hold {
            InputHold::ZeroOrder
        } else {
            InputHold::Continuous
        }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out")]
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: d_out() }
    }
}

/// Everything a command needs, built and validated from a [`RunConfig`].
pub struct Prepared {
    pub system: SystemModel,
    /// Specification as written; trajectories are scored against it.
    pub raw_spec: Specification,
    /// Specification after the coverage guard has been added.
    pub spec: Specification,
    pub schedule: stl::ActiveSchedule,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.outputs.directory)
    }

    pub fn build_system(&self) -> Result<SystemModel, CliError> {
        let err = |e: ntvcbf::dynamics::DynamicsError| CliError::Config(format!("system: {e}"));
        let sec = match &self.system {
            SystemConfig::Builtin(name) => return SystemModel::builtin(name).map_err(err),
            SystemConfig::Detailed(sec) => sec,
        };
        let mut sys = match (&sec.builtin, &sec.linear) {
            (Some(name), None) => SystemModel::builtin(name).map_err(err)?,
            (None, Some(lin)) => {
                let (Some(sb), Some(ib)) = (&sec.state_box, &sec.input_box) else {
                    return Err(CliError::Config("linear systems need state_box and input_box".into()));
                };
                SystemModel::linear("linear", lin.a.clone(), lin.b.clone(), sb.clone(), ib.clone()).map_err(err)?
            }
            _ => return Err(CliError::Config("system needs exactly one of builtin or linear".into())),
        };
        for (what, bx, dim) in [
            ("state_box", &sec.state_box, sys.n),
            ("input_box", &sec.input_box, sys.m),
        ] {
            if let Some(b) = bx {
                let b = BoxSet::new(b.lb.clone(), b.ub.clone()).map_err(err)?;
                if b.dim() != dim {
                    return Err(CliError::Config(format!(
                        "{what} has dimension {}, system needs {dim}",
                        b.dim()
                    )));
                }
            }
        }
        if let Some(b) = &sec.state_box {
            sys.state_box = b.clone();
        }
        if let Some(b) = &sec.input_box {
            sys.input_box = b.clone();
        }
        sys.declared_bounds = sec.bounds;
        Ok(sys)
    }

    pub fn spec_text(&self) -> Result<String, CliError> {
        match &self.spec {
            SpecSource::Inline(s) => Ok(s.clone()),
            SpecSource::File { file } => {
                let p = self.resolve(file);
                fs::read_to_string(&p).map_err(|e| CliError::Config(format!("cannot read spec {}: {e}", p.display())))
            }
        }
    }

    /// Validates the whole configuration before any work.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let system = self.build_system()?;
        let text = self.spec_text()?;
        let raw = stl::parse_spec_with_horizon(&text, system.n, self.horizon)
            .map_err(|e| CliError::Config(format!("spec: {e}")))?;
        let spec = ensure_coverage(&raw, &system.state_box, &self.interval_policy)
            .map_err(|e| CliError::Config(format!("interval policy: {e}")))?;
        let schedule = stl::assign_intervals(&spec, &self.interval_policy)
            .map_err(|e| CliError::Config(format!("interval policy: {e}")))?;
        let mut train = self.train.clone();
        if train.seed != 0 && train.seed != self.nets.seed {
            return Err(CliError::Config(
                "seed belongs in nets.seed; train.seed disagrees".into(),
            ));
        }
        train.seed = self.nets.seed;
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.grid.epsilon > 0.0) {
            return Err(CliError::Config(format!(
                "grid.epsilon must be positive, got {}",
                self.grid.epsilon
            )));
        }
        if !(self.sim.dt > 0.0) {
            return Err(CliError::Config(format!(
                "sim.dt must be positive, got {}",
                self.sim.dt
            )));
        }
        for x0 in &self.sim.initial_states {
            check_initial_state(&system, x0)?;
        }
        Ok(Prepared {
            system,
            raw_spec: raw,
            spec,
            schedule,
            train,
        })
    }

    pub fn build_grid(&self, sys: &SystemModel, horizon: f64, epsilon: f64) -> Result<SampleGrid, CliError> {
        match self.grid.time_spacing {
            Some(dt) => SampleGrid::build_with_time_spacing(&sys.state_box, horizon, epsilon, dt),
            None => SampleGrid::build(&sys.state_box, horizon, epsilon),
        }
        .map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

pub fn check_initial_state(sys: &SystemModel, x0: &[f64]) -> Result<(), CliError> {
    if x0.len() != sys.n {
        return Err(CliError::Config(format!(
            "initial state {x0:?} has dimension {}, system has {}",
            x0.len(),
            sys.n
        )));
    }
    if !sys.state_box.contains(x0) {
        return Err(CliError::Config(format!(
            "initial state {x0:?} lies outside the state box"
        )));
    }
    Ok(())
}

/// Parses `"-1,-1"` or `"[-1, -1]"`.
pub fn parse_state(text: &str) -> Result<Vec<f64>, CliError> {
    text.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("cannot parse state {text:?}")))
        })
        .collect()
}
