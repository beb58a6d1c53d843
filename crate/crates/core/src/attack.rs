//! False data injection on sensor channels.
//!
//! An attacked measurement is `(1 + α(t)) Φ(t) + β(t)` for `t ∈ [t1, t2]`, with the
//! scaling `α` and offset `β` set by the attack type:
//!
//! | type      | α        | β                  |
//! |-----------|----------|--------------------|
//! | poisoning | 0        | ~ N(μ_C, σ_C²)     |
//! | dos       | 0        | Φ(t1) − Φ(t)       |
//! | step      | c        | 0                  |
//! | ramp      | c·Δt     | 0                  |
//! | rtw       | c·Δt     | c·Φ(t1)·Δt         |
//!
//! where `Δt = t − t1`.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Channel, TimeSeriesFrame};
use crate::gridsim::AngleFeedback;

/// Multiple of the pre-attack standard deviation used for σ_C when unset.
pub const DEFAULT_SIGMA_MULTIPLE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    Poisoning,
    Dos,
    Step,
    Ramp,
    Rtw,
}

impl AttackType {
    pub const ALL: [AttackType; 5] = [
        AttackType::Poisoning,
        AttackType::Dos,
        AttackType::Step,
        AttackType::Ramp,
        AttackType::Rtw,
    ];

    /// Coefficient `c` used when the spec leaves it unset (per second for ramp and rtw).
    pub fn default_coefficient(self) -> f64 {
        match self {
            AttackType::Step => 0.1,
            AttackType::Ramp | AttackType::Rtw => 0.005,
            AttackType::Poisoning | AttackType::Dos => 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack window must satisfy t1 < t2 (got t1 = {t1}, t2 = {t2})")]
    Window { t1: f64, t2: f64 },
    #[error("attack needs at least one target sensor")]
    NoTargets,
    #[error("sigma_c must be finite and >= 0")]
    Sigma,
    #[error("t = {t} lies outside the attack window [{t1}, {t2}]")]
    OutsideWindow { t: f64, t1: f64, t2: f64 },
    #[error("unknown target sensor `{0}`")]
    UnknownSensor(String),
    #[error("attack targets channel {spec} but frame carries {frame}")]
    ChannelMismatch { spec: Channel, frame: Channel },
    #[error("attack window [{t1}, {t2}] does not overlap the frame's time span")]
    NoOverlap { t1: f64, t2: f64 },
    #[error("sigma_c unset and no samples before t1 to size it from")]
    NoPreAttackData,
}

/// One false data injection campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(rename = "type")]
    pub attack_type: AttackType,
    pub targets: Vec<String>,
    #[serde(default = "default_channel")]
    pub channel: Channel,
    pub t1: f64,
    pub t2: f64,
    /// Scaling coefficient; falls back to [`AttackType::default_coefficient`].
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub mu_c: f64,
    /// Poisoning spread; resolved from the clean signal when `None`.
    #[serde(default)]
    pub sigma_c: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_channel() -> Channel {
    Channel::VoltageAngle
}

impl AttackSpec {
    pub fn new(attack_type: AttackType, targets: Vec<String>, t1: f64, t2: f64) -> Self {
        Self {
            attack_type,
            targets,
            channel: Channel::VoltageAngle,
            t1,
            t2,
            c: None,
            mu_c: 0.0,
            sigma_c: None,
            seed: 0,
        }
    }

    pub fn coefficient(&self) -> f64 {
        self.c
            .unwrap_or_else(|| self.attack_type.default_coefficient())
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.t1 < self.t2) {
            return Err(AttackError::Window {
                t1: self.t1,
                t2: self.t2,
            });
        }
        if self.targets.is_empty() {
            return Err(AttackError::NoTargets);
        }
        if let Some(s) = self.sigma_c {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(AttackError::Sigma);
            }
        }
        Ok(())
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.t1 && t <= self.t2
    }

    /// Fill `sigma_c` from the clean frame: a multiple of the mean standard deviation of
    /// the target rows over samples before `t1`. Other attack types pass through.
    pub fn resolved(&self, clean: &TimeSeriesFrame) -> Result<AttackSpec, AttackError> {
        let mut out = self.clone();
        if self.attack_type != AttackType::Poisoning || self.sigma_c.is_some() {
            return Ok(out);
        }
        let pre: Vec<usize> = (0..clean.n_samples())
            .filter(|&k| clean.times()[k] < self.t1)
            .collect();
        if pre.len() < 2 {
            return Err(AttackError::NoPreAttackData);
        }
        let mut total = 0.0;
        for id in &self.targets {
            let row = clean
                .sensor_index(id)
                .ok_or_else(|| AttackError::UnknownSensor(id.clone()))?;
            let xs: Vec<f64> = pre.iter().map(|&k| clean.values()[(row, k)]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            total += var.sqrt();
        }
        out.sigma_c = Some(DEFAULT_SIGMA_MULTIPLE * total / self.targets.len() as f64);
        Ok(out)
    }

    fn noise(&self) -> Result<Normal<f64>, AttackError> {
        Normal::new(self.mu_c, self.sigma_c.unwrap_or(0.0)).map_err(|_| AttackError::Sigma)
    }
}

/// Random stream for the poisoning offsets of target number `target` (position in
/// `spec.targets`). Offsets are drawn one per in-window sample, in time order.
pub fn poisoning_rng(seed: u64, target: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(target as u64);
    rng
}

/// `(α(t), β(t))` for one sample. Poisoning draws β from `rng`.
pub fn attack_variables<R: rand::Rng + ?Sized>(
    spec: &AttackSpec,
    t: f64,
    phi_t1: f64,
    phi_t: f64,
    rng: &mut R,
) -> Result<(f64, f64), AttackError> {
    if !spec.in_window(t) {
        return Err(AttackError::OutsideWindow {
            t,
            t1: spec.t1,
            t2: spec.t2,
        });
    }
    let c = spec.coefficient();
    let dt = t - spec.t1;
    Ok(match spec.attack_type {
        AttackType::Poisoning => (0.0, spec.noise()?.sample(rng)),
        AttackType::Dos => (0.0, phi_t1 - phi_t),
        AttackType::Step => (c, 0.0),
        AttackType::Ramp => (c * dt, 0.0),
        AttackType::Rtw => (c * dt, c * phi_t1 * dt),
    })
}

/// Applies an attack sample by sample. Usable offline through [`inject`] and inside the
/// simulator as an [`AngleFeedback`] hook, with identical results.
#[derive(Debug, Clone)]
pub struct StreamInjector {
    spec: AttackSpec,
    /// frame row → position in `spec.targets`
    targets: HashMap<usize, usize>,
    phi_t1: Vec<Option<f64>>,
    rngs: Vec<ChaCha8Rng>,
}

impl StreamInjector {
    pub fn new(spec: &AttackSpec, sensor_ids: &[String]) -> Result<Self, AttackError> {
        spec.validate()?;
        spec.noise()?;
        let mut targets = HashMap::new();
        for (j, id) in spec.targets.iter().enumerate() {
            let row = sensor_ids
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| AttackError::UnknownSensor(id.clone()))?;
            targets.insert(row, j);
        }
        let n = spec.targets.len();
        Ok(Self {
            spec: spec.clone(),
            targets,
            phi_t1: vec![None; n],
            rngs: (0..n).map(|j| poisoning_rng(spec.seed, j)).collect(),
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn is_target(&self, row: usize) -> bool {
        self.targets.contains_key(&row)
    }

    /// Reported value for `row` at time `t`. Calls must arrive in time order per row.
    pub fn apply(&mut self, t: f64, row: usize, value: f64) -> f64 {
        let Some(&j) = self.targets.get(&row) else {
            return value;
        };
        if !self.spec.in_window(t) {
            return value;
        }
        let phi_t1 = *self.phi_t1[j].get_or_insert(value);
        if self.spec.attack_type == AttackType::Dos {
            // `value + (Φ(t1) − value)` can miss Φ(t1) by an ulp
            return phi_t1;
        }
        let (alpha, beta) = attack_variables(&self.spec, t, phi_t1, value, &mut self.rngs[j])
            .expect("window checked above");
        (1.0 + alpha) * value + beta
    }
}

impl AngleFeedback for StreamInjector {
    fn measure(&mut self, _sample: usize, time: f64, row: usize, value: f64) -> f64 {
        self.apply(time, row, value)
    }
}

/// A frame after injection, with per-sensor ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedFrame {
    pub frame: TimeSeriesFrame,
    pub ground_truth: Vec<bool>,
    pub spec: AttackSpec,
}

/// Apply `spec` to `frame`. `spec.sigma_c` must already be resolved for poisoning
/// (see [`AttackSpec::resolved`]); an unset value means zero spread.
pub fn inject(frame: &TimeSeriesFrame, spec: &AttackSpec) -> Result<AttackedFrame, AttackError> {
    if spec.channel != frame.channel() {
        return Err(AttackError::ChannelMismatch {
            spec: spec.channel,
            frame: frame.channel(),
        });
    }
    let mut injector = StreamInjector::new(spec, frame.sensor_ids())?;
    if !frame.times().iter().any(|&t| spec.in_window(t)) {
        return Err(AttackError::NoOverlap {
            t1: spec.t1,
            t2: spec.t2,
        });
    }
    let mut values = frame.values().clone();
    for (k, &t) in frame.times().iter().enumerate() {
        for i in 0..frame.n_sensors() {
            values[(i, k)] = injector.apply(t, i, values[(i, k)]);
        }
    }
    let ground_truth = (0..frame.n_sensors())
        .map(|i| injector.is_target(i))
        .collect();
    Ok(AttackedFrame {
        frame: frame.with_values(values).expect("same shape"),
        ground_truth,
        spec: spec.clone(),
    })
}
