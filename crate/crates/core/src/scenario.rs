//! End-to-end scenarios: simulate, attack, detect.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! duration = 45.0
//! sample_period = 0.05
//! seed = 1
//! channel = "voltage_angle"
//! closed_loop = true
//! # network = "toy2.toml"        # path relative to this file; built-in 68-bus grid if absent
//!
//! [noise]
//! voltage_angle = 5e-4
//!
//! [[events]]
//! bus = 1
//! start_time = 1.0
//! end_time = 5.0
//! delta_load = 0.1
//!
//! [attack]
//! type = "step"
//! targets = ["bus27"]
//! t1 = 20.0
//! t2 = 40.0
//!
//! [window]
//! learning_len = 240
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{inject, AttackError, AttackSpec, AttackedFrame, StreamInjector};
use crate::detector::{run_frame, DeltaScoreSeries, DetectorError, WindowConfig};
use crate::frame::{Channel, FrameError, TimeSeriesFrame};
use crate::gridsim::{
    build_network, GridError, GridEvent, NetworkConfigFile, NetworkModel, NoiseStd, SimConfig,
    SimOutput, Simulator,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl ScenarioError {
    /// True for problems with the inputs, as opposed to failures while running.
    pub fn is_config_error(&self) -> bool {
        match self {
            ScenarioError::Io { .. }
            | ScenarioError::Parse { .. }
            | ScenarioError::Invalid { .. } => true,
            ScenarioError::Grid(e) => matches!(
                e,
                GridError::Parse(_) | GridError::Invalid { .. } | GridError::Config(_)
            ),
            _ => false,
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_period() -> f64 {
    0.05
}

fn default_channel() -> Channel {
    Channel::VoltageAngle
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Network file, relative to the scenario file. `None` selects the built-in grid.
    #[serde(default)]
    pub network: Option<PathBuf>,
    pub duration: f64,
    #[serde(default = "default_period")]
    pub sample_period: f64,
    #[serde(default)]
    pub seed: u64,
    /// Channel fed to the detector.
    #[serde(default = "default_channel")]
    pub channel: Channel,
    /// Extra channels stacked under `channel` before detection.
    #[serde(default)]
    pub stack_with: Vec<Channel>,
    /// Feed tampered angle readings back into the AGC during simulation.
    #[serde(default = "default_true")]
    pub closed_loop: bool,
    #[serde(default)]
    pub noise: NoiseStd,
    #[serde(default)]
    pub events: Vec<GridEvent>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub sim: SimOutput,
    /// Attacked channel with ground truth, when an attack is configured.
    pub attacked: Option<AttackedFrame>,
    /// Per-sensor labels aligned with the detector frame's rows.
    pub labels: Vec<bool>,
    /// The frame the detector consumed.
    pub observed: TimeSeriesFrame,
    pub scores: DeltaScoreSeries,
}

impl ScenarioConfig {
    /// Parse TOML. `base_dir` anchors a relative network path.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let (Some(net), Some(dir)) = (&cfg.network, path.parent()) {
            if net.is_relative() {
                cfg.network = Some(dir.join(net));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn network_model(&self) -> Result<NetworkModel, ScenarioError> {
        let file = match &self.network {
            None => NetworkConfigFile::default_68bus(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ScenarioError::Io {
                    path: p.clone(),
                    source,
                })?;
                NetworkConfigFile::parse(&text)?
            }
        };
        Ok(build_network(&file)?)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            duration: self.duration,
            sample_period: self.sample_period,
            noise: self.noise,
            seed: self.seed,
        }
    }

    /// Check everything that can be checked before simulating.
    pub fn validate(&self, net: &NetworkModel) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(invalid("sample_period", "must be positive"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.bus == 0 || e.bus > net.n_bus() {
                return Err(invalid(
                    format!("events[{i}].bus"),
                    format!("{} outside 1..={}", e.bus, net.n_bus()),
                ));
            }
        }
        self.window
            .validate()
            .map_err(|e| invalid("window", e.to_string()))?;
        let m = self.sim_config().n_samples();
        if self.window.learning_len >= m {
            return Err(invalid(
                "window.learning_len",
                format!(
                    "{} samples leave no room for prediction in {m}",
                    self.window.learning_len
                ),
            ));
        }
        if self.window.span() > m {
            return Err(invalid(
                "window.prediction_len",
                format!(
                    "{} samples exceed the {} left after learning",
                    self.window.prediction_len,
                    m - self.window.learning_len
                ),
            ));
        }
        if self.stack_with.contains(&self.channel) {
            return Err(invalid("stack_with", "repeats the detector channel"));
        }
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| invalid("attack", e.to_string()))?;
            let ids = net.sensor_ids();
            if let Some(t) = a.targets.iter().find(|t| !ids.contains(t)) {
                return Err(invalid("attack.targets", format!("unknown sensor `{t}`")));
            }
            if !(a.t1 < self.duration) {
                return Err(invalid("attack.t1", "must fall before the end of the run"));
            }
        }
        Ok(())
    }

    /// Simulate, inject and detect.
    pub fn run(&self) -> Result<ScenarioOutcome, ScenarioError> {
        let net = self.network_model()?;
        self.validate(&net)?;
        let sim = Simulator::new(net)?;
        let cfg = self.sim_config();

        let (out, attacked) = match &self.attack {
            None => (sim.run(&self.events, &cfg)?, None),
            Some(spec) => {
                let needs_clean_pass =
                    spec.attack_type == crate::AttackType::Poisoning && spec.sigma_c.is_none();
                let looped = self.closed_loop && spec.channel == Channel::VoltageAngle;
                if looped {
                    let spec = if needs_clean_pass {
                        let open = sim.run(&self.events, &cfg)?;
                        spec.resolved(open.frame(spec.channel))?
                    } else {
                        spec.clone()
                    };
                    let ids = sim.network().sensor_ids();
                    let mut hook = StreamInjector::new(&spec, &ids)?;
                    let out = sim.run_with_feedback(&self.events, &cfg, &mut hook)?;
                    let reported = out
                        .reported_angle
                        .clone()
                        .expect("feedback run reports angles");
                    let ground_truth = ids.iter().map(|id| spec.targets.contains(id)).collect();
                    let attacked = AttackedFrame {
                        frame: reported,
                        ground_truth,
                        spec,
                    };
                    (out, Some(attacked))
                } else {
                    let out = sim.run(&self.events, &cfg)?;
                    let clean = out.frame(spec.channel);
                    let spec = spec.resolved(clean)?;
                    let attacked = inject(clean, &spec)?;
                    (out, Some(attacked))
                }
            }
        };

        let pick = |c: Channel| -> &TimeSeriesFrame {
            match &attacked {
                Some(a) if a.spec.channel == c => &a.frame,
                _ => out.frame(c),
            }
        };
        let observed = if self.stack_with.is_empty() {
            pick(self.channel).clone()
        } else {
            let mut parts = vec![pick(self.channel)];
            parts.extend(self.stack_with.iter().map(|&c| pick(c)));
            TimeSeriesFrame::stack(&parts)?
        };
        let labels = label_rows(&observed, attacked.as_ref());
        let scores = run_frame(&observed, &self.window)?;
        Ok(ScenarioOutcome {
            sim: out,
            attacked,
            labels,
            observed,
            scores,
        })
    }
}

/// Ground truth per detector row: a row is attacked when it carries a target sensor on
/// the attacked channel.
fn label_rows(observed: &TimeSeriesFrame, attacked: Option<&AttackedFrame>) -> Vec<bool> {
    let Some(a) = attacked else {
        return vec![false; observed.n_sensors()];
    };
    let stacked_prefix = format!("{}:", a.spec.channel);
    observed
        .sensor_ids()
        .iter()
        .map(|id| {
            let bare = id
                .strip_prefix(&stacked_prefix)
                .or((observed.channel() == a.spec.channel).then_some(id.as_str()));
            bare.is_some_and(|b| a.spec.targets.iter().any(|t| t == b))
        })
        .collect()
}
