use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::NetworkModel;
use super::GridError;
use crate::frame::{sample_times, Channel, TimeSeriesFrame};

/// Internal RK4 steps per output sample.
pub const SUBSTEPS: usize = 5;

/// Scheduled step change of demand at one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEvent {
    /// Bus number, 1-based as in network files.
    pub bus: usize,
    pub start_time: f64,
    /// `None` keeps the change in place until the end of the run.
    #[serde(default)]
    pub end_time: Option<f64>,
    pub delta_load: f64,
}

impl GridEvent {
    fn active(&self, t: f64) -> bool {
        // event boundaries are matched on the internal step grid
        const EDGE: f64 = 1e-9;
        t >= self.start_time - EDGE && self.end_time.is_none_or(|e| t < e - EDGE)
    }
}

/// Per-channel standard deviation of additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseStd {
    pub voltage_angle: f64,
    pub voltage_magnitude: f64,
    pub frequency: f64,
    pub frequency_deviation: f64,
}

impl NoiseStd {
    pub fn get(&self, c: Channel) -> f64 {
        match c {
            Channel::VoltageAngle => self.voltage_angle,
            Channel::VoltageMagnitude => self.voltage_magnitude,
            Channel::Frequency => self.frequency,
            Channel::FrequencyDeviation => self.frequency_deviation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub sample_period: f64,
    pub noise: NoiseStd,
    pub seed: u64,
}

impl SimConfig {
    /// Number of output samples, `duration / sample_period` rounded to the nearest integer.
    pub fn n_samples(&self) -> usize {
        (self.duration / self.sample_period).round() as usize
    }
}

/// Sensor-side tampering of voltage-angle measurements that the AGC consumes.
///
/// `measure` is called once per sample and bus, in time-major order, with the noisy
/// measurement; it returns the value the sensor reports.
pub trait AngleFeedback {
    fn measure(&mut self, sample: usize, time: f64, row: usize, value: f64) -> f64;
}

/// Simulator output. `clean` holds the sensor readings without tampering.
/// `reported_angle` is present when a feedback hook was installed.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub clean: BTreeMap<Channel, TimeSeriesFrame>,
    pub reported_angle: Option<TimeSeriesFrame>,
}

impl SimOutput {
    pub fn frame(&self, c: Channel) -> &TimeSeriesFrame {
        &self.clean[&c]
    }
}

/// Swing-equation simulator over a Kron-reduced network.
///
/// State is generator angle `θ` (rad), speed deviation `ω = θ̇` (rad/s) and the AGC
/// integrator `z` (p.u.):
///
/// ```text
/// M ω̇ = P_m0 + a·z − P_eff(t) − Σ_j B_ij sin(θ_i − θ_j) − D ω
/// ż   = −K (wᵀω + e(t))
/// ```
///
/// `wᵀω` is the mean bus frequency deviation and `e(t)` the extra rate seen by the AGC
/// when reported angles are tampered with.
#[derive(Debug, Clone)]
pub struct Simulator {
    net: NetworkModel,
    p_mech: DVector<f64>,
    theta0: DVector<f64>,
    speed_weights: DVector<f64>,
}

impl Simulator {
    pub fn new(net: NetworkModel) -> Result<Self, GridError> {
        let total: f64 = net.base_load.iter().sum();
        let p_mech =
            DVector::from_iterator(net.n_gen, net.agc_participation.iter().map(|a| a * total));
        let eff = net.effective_load(&net.base_load);
        let theta0 = equilibrium(&net.reduction.coupling, &(&p_mech - eff))?;
        let speed_weights = DVector::from_vec(net.mean_speed_weights());
        Ok(Self {
            net,
            p_mech,
            theta0,
            speed_weights,
        })
    }

    pub fn network(&self) -> &NetworkModel {
        &self.net
    }

    /// Generator angles at the pre-disturbance operating point.
    pub fn equilibrium_angles(&self) -> &[f64] {
        self.theta0.as_slice()
    }

    pub fn run(&self, events: &[GridEvent], cfg: &SimConfig) -> Result<SimOutput, GridError> {
        self.run_inner(events, cfg, None)
    }

    pub fn run_with_feedback(
        &self,
        events: &[GridEvent],
        cfg: &SimConfig,
        feedback: &mut dyn AngleFeedback,
    ) -> Result<SimOutput, GridError> {
        self.run_inner(events, cfg, Some(feedback))
    }

    fn validate(&self, events: &[GridEvent], cfg: &SimConfig) -> Result<(), GridError> {
        if !(cfg.duration > 0.0) {
            return Err(GridError::Config("duration must be > 0".into()));
        }
        if !(cfg.sample_period > 0.0) {
            return Err(GridError::Config("sample_period must be > 0".into()));
        }
        if cfg.n_samples() < 2 {
            return Err(GridError::Config(
                "duration shorter than two samples".into(),
            ));
        }
        for c in Channel::ALL {
            if !(cfg.noise.get(c) >= 0.0) {
                return Err(GridError::Config(format!("noise.{c} must be >= 0")));
            }
        }
        for (i, e) in events.iter().enumerate() {
            if e.bus == 0 || e.bus > self.net.n_bus() {
                return Err(GridError::Config(format!(
                    "events[{i}].bus {} outside 1..={}",
                    e.bus,
                    self.net.n_bus()
                )));
            }
            if !(e.start_time >= 0.0 && e.start_time <= cfg.duration) {
                return Err(GridError::Config(format!(
                    "events[{i}].start_time outside [0, duration]"
                )));
            }
            if let Some(end) = e.end_time {
                if !(end > e.start_time) {
                    return Err(GridError::Config(format!(
                        "events[{i}].end_time must exceed start_time"
                    )));
                }
            }
            if !e.delta_load.is_finite() {
                return Err(GridError::Config(format!(
                    "events[{i}].delta_load non-finite"
                )));
            }
        }
        Ok(())
    }

    fn bus_load(&self, events: &[GridEvent], t: f64) -> Vec<f64> {
        let mut load = self.net.base_load.clone();
        for e in events.iter().filter(|e| e.active(t)) {
            load[e.bus - 1] += e.delta_load;
        }
        load
    }

    fn run_inner(
        &self,
        events: &[GridEvent],
        cfg: &SimConfig,
        mut feedback: Option<&mut dyn AngleFeedback>,
    ) -> Result<SimOutput, GridError> {
        self.validate(events, cfg)?;
        let net = &self.net;
        let g = net.n_gen;
        let n = net.n_bus();
        let m = cfg.n_samples();
        let h = cfg.sample_period / SUBSTEPS as f64;

        let mut state = DVector::zeros(2 * g + 1);
        state.rows_mut(0, g).copy_from(&self.theta0);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out: BTreeMap<Channel, DMatrix<f64>> = Channel::ALL
            .iter()
            .map(|&c| (c, DMatrix::zeros(n, m)))
            .collect();
        let mut reported = feedback.as_ref().map(|_| DMatrix::zeros(n, m));
        let mut prev_offset: Option<Vec<f64>> = None;
        let mut agc_bias = 0.0;

        let mut load = self.bus_load(events, 0.0);
        let mut eff = net.effective_load(&load);
        let f0 = net.base_frequency;

        for k in 0..m {
            let t = k as f64 * cfg.sample_period;
            let theta = &state.as_slice()[..g];
            let omega = &state.as_slice()[g..2 * g];
            let angles = net.bus_angles(theta, &load);
            let speeds = net.bus_speeds(omega);
            for c in Channel::ALL {
                let std = cfg.noise.get(c);
                let noise = (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"));
                let col = out.get_mut(&c).expect("all channels allocated");
                for i in 0..n {
                    let clean = match c {
                        Channel::VoltageAngle => angles[i],
                        Channel::VoltageMagnitude => 1.0 - net.vm_droop * load[i],
                        Channel::Frequency => f0 + speeds[i] / (2.0 * PI),
                        Channel::FrequencyDeviation => speeds[i] / (2.0 * PI * f0),
                    };
                    let eps = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    col[(i, k)] = clean + eps;
                }
            }
            if let (Some(fb), Some(rep)) = (feedback.as_deref_mut(), reported.as_mut()) {
                let measured = &out[&Channel::VoltageAngle];
                let mut offset = Vec::with_capacity(n);
                for i in 0..n {
                    let v = measured[(i, k)];
                    let r = fb.measure(k, t, i, v);
                    rep[(i, k)] = r;
                    offset.push(r - v);
                }
                // backward-difference frequency estimate of the tampering, held until the next sample
                agc_bias = match &prev_offset {
                    Some(prev) => {
                        offset.iter().zip(prev).map(|(a, b)| a - b).sum::<f64>()
                            / (n as f64 * cfg.sample_period)
                    }
                    None => 0.0,
                };
                prev_offset = Some(offset);
            }
            if k + 1 == m {
                break;
            }
            for s in 0..SUBSTEPS {
                let ts = t + s as f64 * h;
                let new_load = self.bus_load(events, ts);
                if new_load != load {
                    load = new_load;
                    eff = net.effective_load(&load);
                }
                self.rk4_step(&mut state, &eff, agc_bias, h);
                let bad = state.rows(g, g).iter().any(|w| !(w.abs() <= net.max_speed));
                if bad {
                    return Err(GridError::Diverged { time: ts + h });
                }
            }
            // samples see the demand in force at their own timestamp
            let t_next = (k + 1) as f64 * cfg.sample_period;
            let new_load = self.bus_load(events, t_next);
            if new_load != load {
                load = new_load;
                eff = net.effective_load(&load);
            }
        }

        let ids = net.sensor_ids();
        let times = sample_times(m, cfg.sample_period);
        let mk = |c: Channel, v: DMatrix<f64>| {
            TimeSeriesFrame::new(ids.clone(), c, times.clone(), v).expect("consistent shapes")
        };
        let reported_angle = reported.map(|v| mk(Channel::VoltageAngle, v));
        let clean = out.into_iter().map(|(c, v)| (c, mk(c, v))).collect();
        Ok(SimOutput {
            clean,
            reported_angle,
        })
    }

    fn deriv(&self, x: &DVector<f64>, eff: &DVector<f64>, bias: f64) -> DVector<f64> {
        let net = &self.net;
        let g = net.n_gen;
        let b = &net.reduction.coupling;
        let z = x[2 * g];
        let mut dx = DVector::zeros(2 * g + 1);
        for i in 0..g {
            let mut pe = 0.0;
            for j in 0..g {
                if i != j {
                    pe += b[(i, j)] * (x[i] - x[j]).sin();
                }
            }
            let w = x[g + i];
            let pm = self.p_mech[i] + net.agc_participation[i] * z;
            dx[i] = w;
            dx[g + i] = (pm - eff[i] - pe - net.damping[i] * w) / net.inertia[i];
        }
        let mean_speed = self.speed_weights.dot(&x.rows(g, g));
        dx[2 * g] = -net.agc_gain * (mean_speed + bias);
        dx
    }

    fn rk4_step(&self, x: &mut DVector<f64>, eff: &DVector<f64>, bias: f64, h: f64) {
        let k1 = self.deriv(x, eff, bias);
        let k2 = self.deriv(&(&*x + &k1 * (h / 2.0)), eff, bias);
        let k3 = self.deriv(&(&*x + &k2 * (h / 2.0)), eff, bias);
        let k4 = self.deriv(&(&*x + &k3 * h), eff, bias);
        *x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
}

/// Solve `Σ_j B_ij sin(θ_i − θ_j) = P_i` by Newton's method with `θ_0 = 0`.
fn equilibrium(coupling: &DMatrix<f64>, p: &DVector<f64>) -> Result<DVector<f64>, GridError> {
    let g = coupling.nrows();
    let mut theta = DVector::zeros(g);
    if g == 1 {
        return Ok(theta);
    }
    let residual = |th: &DVector<f64>| {
        DVector::from_fn(g - 1, |r, _| {
            let i = r + 1;
            (0..g)
                .map(|j| coupling[(i, j)] * (th[i] - th[j]).sin())
                .sum::<f64>()
                - p[i]
        })
    };
    for _ in 0..50 {
        let f = residual(&theta);
        if f.amax() < 1e-13 {
            return Ok(theta);
        }
        let jac = DMatrix::from_fn(g - 1, g - 1, |r, c| {
            let (i, j) = (r + 1, c + 1);
            if i == j {
                (0..g)
                    .map(|k| coupling[(i, k)] * (theta[i] - theta[k]).cos())
                    .sum()
            } else {
                -coupling[(i, j)] * (theta[i] - theta[j]).cos()
            }
        });
        let step = jac.lu().solve(&f).ok_or(GridError::NoEquilibrium)?;
        for r in 0..g - 1 {
            theta[r + 1] -= step[r];
        }
    }
    if residual(&theta).amax() < 1e-10 {
        Ok(theta)
    } else {
        Err(GridError::NoEquilibrium)
    }
}

/// Build, then run without tampering.
pub fn simulate(
    net: &NetworkModel,
    events: &[GridEvent],
    cfg: &SimConfig,
) -> Result<SimOutput, GridError> {
    Simulator::new(net.clone())?.run(events, cfg)
}
