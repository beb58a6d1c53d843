use std::f64::consts::PI;

use kmsig_core::gridsim::{
    build_network, simulate, GridError, GridEvent, NetworkConfigFile, NetworkModel, NoiseStd,
    SimConfig, SimOutput,
};
use kmsig_core::Channel;

const TOY: &str = include_str!("../../../configs/toy2.toml");

fn toy(agc_gain: f64) -> NetworkModel {
    let mut cfg = NetworkConfigFile::parse(TOY).unwrap();
    cfg.agc_gain = agc_gain;
    build_network(&cfg).unwrap()
}

fn quiet(duration: f64) -> SimConfig {
    SimConfig {
        duration,
        sample_period: 0.05,
        noise: NoiseStd::default(),
        seed: 0,
    }
}

fn step_at(bus: usize, start: f64, end: Option<f64>, delta: f64) -> GridEvent {
    GridEvent {
        bus,
        start_time: start,
        end_time: end,
        delta_load: delta,
    }
}

/// Dormand–Prince 5(4) with step-size control, integrating `f` from `t0` to `t1`.
fn dopri5(f: &dyn Fn(f64, &[f64]) -> Vec<f64>, t0: f64, t1: f64, y: &mut Vec<f64>, tol: f64) {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = y.len();
    let mut t = t0;
    let mut h = (t1 - t0).min(1e-3);
    while t < t1 {
        h = h.min(t1 - t);
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let ys: Vec<f64> = (0..n)
                .map(|i| y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                .collect();
            k.push(f(t + C[s] * h, &ys));
        }
        let y5: Vec<f64> = (0..n)
            .map(|i| y[i] + h * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>())
            .collect();
        let err = (0..n)
            .map(|i| {
                let e = h * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
                (e / (tol * (1.0 + y[i].abs().max(y5[i].abs())))).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let err = err.sqrt();
        if err <= 1.0 {
            t += h;
            *y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
}

/// Two-machine swing model with AGC integrator, written out longhand.
/// State `[θ1, θ2, ω1, ω2, z]`; `load2` is the extra demand at bus 2.
fn toy_rhs(net: &NetworkModel, load2: f64) -> impl Fn(f64, &[f64]) -> Vec<f64> + '_ {
    move |_t, x| {
        let b = net.susceptance[(0, 1)];
        let flow = b * (x[0] - x[1]).sin();
        let pm = |g: usize| net.agc_participation[g] * x[4];
        let w1 = (pm(0) - flow - net.damping[0] * x[2]) / net.inertia[0];
        let w2 = (pm(1) - load2 + flow - net.damping[1] * x[3]) / net.inertia[1];
        let mean = 0.5 * (x[2] + x[3]);
        vec![x[2], x[3], w1, w2, -net.agc_gain * mean]
    }
}

/// Oracle trajectory sampled every `period`, with a load step of `delta` at bus 2
/// switched on over `[on, off)`.
fn toy_oracle(
    net: &NetworkModel,
    m: usize,
    period: f64,
    on: f64,
    off: f64,
    delta: f64,
) -> Vec<Vec<f64>> {
    let mut y = vec![0.0; 5];
    let mut out = vec![y.clone()];
    for k in 1..m {
        let (a, b) = ((k - 1) as f64 * period, k as f64 * period);
        let mut cuts = vec![a];
        for e in [on, off] {
            if e > a && e < b {
                cuts.push(e);
            }
        }
        cuts.push(b);
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let load = if mid >= on && mid < off { delta } else { 0.0 };
            dopri5(&toy_rhs(net, load), w[0], w[1], &mut y, 1e-11);
        }
        out.push(y.clone());
    }
    out
}

fn speeds(out: &SimOutput, f0: f64) -> Vec<Vec<f64>> {
    let f = out.frame(Channel::Frequency);
    (0..f.n_samples())
        .map(|k| {
            (0..f.n_sensors())
                .map(|i| (f.values()[(i, k)] - f0) * 2.0 * PI)
                .collect()
        })
        .collect()
}

/// Largest |x| over consecutive spans of `len` samples.
fn envelope(x: &[f64], len: usize) -> Vec<f64> {
    x.chunks_exact(len)
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect()
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let net = build_network(&NetworkConfigFile::default_68bus()).unwrap();
    let out = simulate(&net, &[], &quiet(10.0)).unwrap();
    let fd = out.frame(Channel::FrequencyDeviation);
    assert!(
        fd.values().amax() < 1e-9,
        "max |Δf| = {:e}",
        fd.values().amax()
    );
    let ang = out.frame(Channel::VoltageAngle).values();
    for k in 1..ang.ncols() {
        assert!((ang.column(k) - ang.column(0)).amax() < 1e-9);
    }
}

#[test]
fn toy_load_step_matches_adaptive_oracle() {
    let net = toy(0.5);
    let cfg = quiet(60.0);
    let m = cfg.n_samples();
    let out = simulate(&net, &[step_at(2, 1.0, None, 0.1)], &cfg).unwrap();
    let oracle = toy_oracle(&net, m, cfg.sample_period, 1.0, f64::INFINITY, 0.1);
    let ang = out.frame(Channel::VoltageAngle).values();
    let w = speeds(&out, net.base_frequency);
    for k in 0..m {
        for g in 0..2 {
            assert!(
                (ang[(g, k)] - oracle[k][g]).abs() < 1e-4,
                "angle {g} at sample {k}"
            );
            assert!(
                (w[k][g] - oracle[k][2 + g]).abs() < 1e-4,
                "speed {g} at sample {k}"
            );
        }
    }
    let fd = out.frame(Channel::FrequencyDeviation).values();
    assert!(fd.column(m - 1).amax() < 1e-3);
    let early = fd.columns(20, 100).amax();
    assert!(
        early > 10.0 * fd.column(m - 1).amax(),
        "transient should decay under AGC"
    );
}

#[test]
fn envelope_decays_without_agc() {
    let net = toy(0.0);
    let cfg = quiet(20.0);
    let m = cfg.n_samples();
    // a short pulse leaves the machines in a perturbed state at t = 0.5 s
    let out = simulate(&net, &[step_at(2, 0.0, Some(0.5), 0.3)], &cfg).unwrap();
    let oracle = toy_oracle(&net, m, cfg.sample_period, 0.0, 0.5, 0.3);
    let w = speeds(&out, net.base_frequency);
    for g in 0..2 {
        let sim: Vec<f64> = w[10..].iter().map(|r| r[g]).collect();
        let ora: Vec<f64> = oracle[10..].iter().map(|r| r[2 + g]).collect();
        for (a, b) in sim.iter().zip(&ora) {
            assert!((a - b).abs() < 1e-4);
        }
        // one span ≈ one swing period, 2π / √(2b/M)
        for series in [&sim, &ora] {
            let p = envelope(series, 40);
            assert!(p.len() >= 8);
            for pair in p.windows(2) {
                assert!(pair[1] <= pair[0], "envelope grew: {pair:?}");
            }
        }
    }
}

#[test]
fn paper_timeline_has_900_columns_at_exact_timestamps() {
    let net = build_network(&NetworkConfigFile::default_68bus()).unwrap();
    let events = [
        step_at(1, 1.0, Some(5.0), 0.1),
        step_at(52, 15.0, None, 0.5),
    ];
    let out = simulate(&net, &events, &quiet(45.0)).unwrap();
    for c in Channel::ALL {
        let f = out.frame(c);
        assert_eq!(f.n_samples(), 900);
        assert_eq!(f.n_sensors(), 68);
        for (k, t) in f.times().iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.05);
        }
    }
}

#[test]
fn identical_seed_gives_identical_frames() {
    let net = build_network(&NetworkConfigFile::default_68bus()).unwrap();
    let events = [step_at(52, 2.0, None, 0.5)];
    let mut cfg = quiet(6.0);
    cfg.noise.voltage_angle = 1e-3;
    cfg.noise.frequency = 1e-3;
    cfg.seed = 11;
    let a = simulate(&net, &events, &cfg).unwrap();
    let b = simulate(&net, &events, &cfg).unwrap();
    for c in Channel::ALL {
        let (x, y) = (a.frame(c).values(), b.frame(c).values());
        assert!(x
            .iter()
            .zip(y.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    cfg.seed = 12;
    let c = simulate(&net, &events, &cfg).unwrap();
    assert_ne!(
        a.frame(Channel::VoltageAngle).values(),
        c.frame(Channel::VoltageAngle).values()
    );
}

#[test]
fn noise_only_touches_its_channel() {
    let net = toy(0.5);
    let mut cfg = quiet(2.0);
    let clean = simulate(&net, &[], &cfg).unwrap();
    cfg.noise.voltage_magnitude = 0.01;
    let noisy = simulate(&net, &[], &cfg).unwrap();
    assert_eq!(
        clean.frame(Channel::VoltageAngle).values(),
        noisy.frame(Channel::VoltageAngle).values()
    );
    assert_ne!(
        clean.frame(Channel::VoltageMagnitude).values(),
        noisy.frame(Channel::VoltageMagnitude).values()
    );
}

#[test]
fn runaway_speed_reports_divergence_time() {
    let mut cfg = NetworkConfigFile::parse(TOY).unwrap();
    cfg.max_speed = 0.5;
    cfg.agc_gain = 0.0;
    let net = build_network(&cfg).unwrap();
    // demand far beyond the line's transfer limit pulls the machines out of step
    let err = simulate(&net, &[step_at(2, 1.0, None, 20.0)], &quiet(20.0)).unwrap_err();
    match err {
        GridError::Diverged { time } => assert!(time > 1.0 && time < 20.0, "time {time}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_runs_are_rejected() {
    let net = toy(0.5);
    let bad_bus = simulate(&net, &[step_at(3, 1.0, None, 0.1)], &quiet(5.0));
    assert!(matches!(bad_bus, Err(GridError::Config(_))));
    let late = simulate(&net, &[step_at(1, 6.0, None, 0.1)], &quiet(5.0));
    assert!(matches!(late, Err(GridError::Config(_))));
    let reversed = simulate(&net, &[step_at(1, 2.0, Some(1.0), 0.1)], &quiet(5.0));
    assert!(matches!(reversed, Err(GridError::Config(_))));
    let mut cfg = quiet(5.0);
    cfg.sample_period = 0.0;
    assert!(matches!(
        simulate(&net, &[], &cfg),
        Err(GridError::Config(_))
    ));
}

#[test]
fn bad_network_configs_name_the_field() {
    let mut cfg = NetworkConfigFile::parse(TOY).unwrap();
    cfg.generators[0].participation = 0.4;
    match build_network(&cfg) {
        Err(GridError::Invalid { field, .. }) => assert_eq!(field, "agc_participation"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        NetworkConfigFile::parse("n_bus = 2\nbogus = 1"),
        Err(GridError::Parse(_))
    ));
}
