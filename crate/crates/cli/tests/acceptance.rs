//! Acceptance suite. Runs every check in order, prints one PASS/FAIL line each and
//! exits non-zero when any check fails.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use kmsig_core::attack::{attack_variables, inject, poisoning_rng, AttackSpec, AttackType};
use kmsig_core::detector::{delta_scores, divergence, normalize_two_step};
use kmsig_core::frame::sample_times;
use kmsig_core::scenario::{ScenarioConfig, ScenarioOutcome};
use kmsig_core::{
    fit, Backend, Channel, DeltaScoreSeries, DivergenceKind, FitOptions, SnapshotMatrix,
    TimeSeriesFrame,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number, name, time budget and body of one check.
type Check = (u32, &'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_config(name: &str, edit: impl FnOnce(&mut ScenarioConfig)) -> ScenarioOutcome {
    let mut cfg = ScenarioConfig::load(&config_path(name)).expect("shipped config loads");
    edit(&mut cfg);
    cfg.run().expect("scenario runs")
}

/// Largest distance between matched members of two eigenvalue multisets.
fn multiset_gap(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut unused: Vec<Complex64> = b.to_vec();
    let mut worst = 0.0f64;
    for x in a {
        let (i, d) = unused
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm()))
            .fold(
                (0, f64::INFINITY),
                |acc, c| if c.1 < acc.1 { c } else { acc },
            );
        worst = worst.max(d);
        unused.remove(i);
    }
    worst
}

fn rotation_block(angle: f64, radius: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[radius * c, -radius * s, radius * s, radius * c])
}

fn koopman_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = DMatrix::zeros(4, 4);
    a.view_mut((0, 0), (2, 2))
        .copy_from(&rotation_block(0.3, 0.95));
    a.view_mut((2, 2), (2, 2))
        .copy_from(&rotation_block(0.7, 0.9));
    let basis =
        DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(4, 4) * 2.0;
    let a = &basis * a * basis.clone().try_inverse().unwrap();
    let observe = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let mut truth = Vec::new();
    for &(ang, rad) in &[(0.3, 0.95), (0.7, 0.9)] {
        truth.push(Complex64::from_polar(rad, ang));
        truth.push(Complex64::from_polar(rad, -ang));
    }
    let (m, horizon) = (60, 40);
    let mut x = x0.clone();
    let mut cols = Vec::new();
    for _ in 0..m + horizon {
        cols.push(&observe * &x);
        x = &a * x;
    }
    let data = DMatrix::from_columns(&cols[..m]);
    let snaps = SnapshotMatrix::new(data, 0.05).unwrap();
    let opts = FitOptions {
        rank_energy: 1.0,
        delay: 10,
        ..FitOptions::default()
    };
    let mut worst_eig = 0.0f64;
    let mut worst_pred = 0.0f64;
    for backend in [Backend::Dmd, Backend::Arnoldi, Backend::HankelDmd] {
        let model = fit(&snaps, backend, &opts).unwrap();
        worst_eig = worst_eig.max(multiset_gap(model.eigenvalues(), &truth));
        let pred = model.predict(horizon).unwrap();
        for (k, truth) in cols.iter().enumerate().take(horizon + 1).skip(1) {
            worst_pred = worst_pred.max((pred.column(k - 1) - truth).amax());
        }
    }
    outcome(
        worst_eig <= 1e-6 && worst_pred <= 1e-6,
        format!("max eigenvalue gap {worst_eig:.2e}, max 40-step prediction error {worst_pred:.2e} (tol 1e-6)"),
    )
}

fn hankel_lift() -> Outcome {
    let (omega, period) = (2.0 * PI * 0.7, 0.05);
    let data = DMatrix::from_fn(1, 200, |_, k| (omega * k as f64 * period).cos());
    let snaps = SnapshotMatrix::new(data, period).unwrap();
    let target = Complex64::from_polar(1.0, omega * period);
    let truth = [target, target.conj()];
    let dmd = fit(&snaps, Backend::Dmd, &FitOptions::default()).unwrap();
    let dmd_gap = dmd
        .eigenvalues()
        .iter()
        .map(|l| (l - target).norm())
        .fold(f64::INFINITY, f64::min);
    let opts = FitOptions {
        delay: 10,
        ..FitOptions::default()
    };
    let hankel = fit(&snaps, Backend::HankelDmd, &opts).unwrap();
    let gap = multiset_gap(hankel.eigenvalues(), &truth);
    outcome(
        dmd_gap > 1e-3 && gap <= 1e-6,
        format!(
            "dmd: {} eigenvalue(s), nearest {dmd_gap:.2e} from e^(iωT); hankel d=10: pair within {gap:.2e} (tol 1e-6)",
            dmd.eigenvalues().len()
        ),
    )
}

fn normalization_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let p = rng.random_range(2..12);
        let w = rng.random_range(2..40);
        let mut v = DMatrix::from_fn(p, w, |_, _| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..10.0)
            }
        });
        if rng.random_bool(0.1) {
            v.row_mut(rng.random_range(0..p)).fill(0.0);
        }
        if rng.random_bool(0.1) {
            v.column_mut(rng.random_range(0..w)).fill(0.0);
        }
        let n = normalize_two_step(&v).unwrap();
        let rows_ok = n.rows.row_iter().all(|r| (r.sum() - 1.0).abs() <= 1e-9)
            && n.rows.iter().all(|x| *x >= 0.0);
        let tau = rng.random_range(0.1..20.0);
        let mut ok = rows_ok;
        for kind in [DivergenceKind::Kl, DivergenceKind::Js] {
            let (d, s) = delta_scores(&n, kind, tau, 1e-12).unwrap();
            ok &= s.iter().all(|x| *x > 0.0 && *x <= 1.0);
            ok &= d
                .iter()
                .zip(s.iter())
                .all(|(d, s)| (s - (-tau * d).exp()).abs() <= 1e-12);
        }
        let a: Vec<f64> = n.rows.row(0).iter().copied().collect();
        let b: Vec<f64> = n.rows.row(p - 1).iter().copied().collect();
        ok &= divergence(&a, &a, DivergenceKind::Kl, 1e-12).unwrap() <= 1e-10;
        let ab = divergence(&a, &b, DivergenceKind::Js, 1e-12).unwrap();
        let ba = divergence(&b, &a, DivergenceKind::Js, 1e-12).unwrap();
        ok &= (ab - ba).abs() <= 1e-12 && ab <= LN_2 + 1e-12;
        if !ok {
            failures.push(trial);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 random matrices, {} violating trials {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    )
}

fn attack_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (p, m, period) = (4, 1000, 0.05);
    let ids: Vec<String> = (0..p).map(|i| format!("s{i}")).collect();
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for ty in AttackType::ALL {
        let values = DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
        let frame = TimeSeriesFrame::new(
            ids.clone(),
            Channel::VoltageAngle,
            sample_times(m, period),
            values,
        )
        .unwrap();
        let t1 = rng.random_range(1.0..30.0);
        let t2 = t1 + rng.random_range(1.0..19.0);
        let targets: Vec<String> = vec![ids[1].clone(), ids[3].clone()];
        let mut spec = AttackSpec::new(ty, targets.clone(), t1, t2);
        spec.c = Some(rng.random_range(-0.2..0.2));
        spec.mu_c = 0.05;
        spec.sigma_c = Some(0.1);
        spec.seed = rng.random();
        let out = inject(&frame, &spec).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let target = targets.iter().position(|t| t == id);
            let mut stream = target.map(|j| poisoning_rng(spec.seed, j));
            let mut phi_t1 = None;
            for k in 0..m {
                let t = frame.times()[k];
                let clean = frame.values()[(i, k)];
                let want = match (&mut stream, spec.in_window(t)) {
                    (Some(r), true) => {
                        let x1 = *phi_t1.get_or_insert(clean);
                        let (alpha, beta) = attack_variables(&spec, t, x1, clean, r).unwrap();
                        if ty == AttackType::Dos {
                            x1
                        } else {
                            (1.0 + alpha) * clean + beta
                        }
                    }
                    _ => clean,
                };
                checked += 1;
                if out.frame.values()[(i, k)].to_bits() != want.to_bits() {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(
        mismatches == 0,
        format!(
            "{checked} samples over 5 attack types, {mismatches} differ from the per-sample oracle"
        ),
    )
}

fn target_row(series: &DeltaScoreSeries, outcome: &ScenarioOutcome) -> usize {
    outcome
        .labels
        .iter()
        .position(|&l| l)
        .expect("scenario has a target")
        .min(series.sensor_ids.len() - 1)
}

/// Windows whose prediction span starts in `[t1, t1 + 2]`.
fn onset_windows(series: &DeltaScoreSeries) -> Vec<usize> {
    series.windows_between(20.0, 22.0)
}

fn hit_fraction(series: &DeltaScoreSeries, windows: &[usize], target: usize) -> f64 {
    let hits = windows
        .iter()
        .filter(|&&w| series.argmin(w) == Some(target))
        .count();
    hits as f64 / windows.len() as f64
}

fn outlier_vs_event() -> Outcome {
    let attacked = run_config("paper_timeline.toml", |_| {});
    let s = &attacked.scores;
    let target = target_row(s, &attacked);
    let wins = onset_windows(s);
    let frac = hit_fraction(s, &wins, target);

    let quiet = run_config("event_only.toml", |_| {});
    let q = &quiet.scores;
    let post = q.windows_between(15.0, f64::INFINITY);
    let mut counts = vec![0usize; q.sensor_ids.len()];
    for &w in &post {
        if let Some(i) = q.argmin(w) {
            counts[i] += 1;
        }
    }
    let (top, top_n) = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap();
    let share = *top_n as f64 / post.len() as f64;
    outcome(
        frac >= 0.8 && share <= 0.5,
        format!(
            "attacked sensor argmin in {:.0}% of {} onset windows (need >= 80%); event-only: most frequent argmin {} in {:.0}% of {} post-event windows (need <= 50%)",
            frac * 100.0,
            wins.len(),
            q.sensor_ids[top],
            share * 100.0,
            post.len()
        ),
    )
}

/// One-sided Mann–Kendall test for a decreasing trend at the 5% level.
fn decreasing_trend(x: &[f64]) -> (bool, f64) {
    let n = x.len();
    if n < 4 {
        return (false, f64::NAN);
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (x[j] - x[i]).signum();
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    (z < -1.6449, z)
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    x.windows(len)
        .map(|w| w.iter().sum::<f64>() / len as f64)
        .collect()
}

fn detectability_window() -> Outcome {
    let step = run_config("paper_timeline.toml", |_| {});
    let s = &step.scores;
    let target = target_row(s, &step);
    // windows whose prediction span overlaps the attack and ends by t2
    let wins = s.windows_between(18.0, 38.0);
    let margin: Vec<f64> = wins
        .iter()
        .map(|&w| s.min_over(w, |i| i != target).unwrap() - s.scores[(w, target)])
        .collect();
    let (peak, peak_val) =
        margin
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
    let smooth = moving_average(&margin[peak..], 5);
    let (trend, z) = decreasing_trend(&smooth);
    let step_ok = peak_val > 0.0 && trend;

    let pois = run_config("poisoning.toml", |_| {});
    let ps = &pois.scores;
    let pt = target_row(ps, &pois);
    let pw: Vec<usize> = ps.windows_between(20.0, 40.0 - 1e-6);
    let pfrac = hit_fraction(ps, &pw, pt);
    outcome(
        step_ok && pfrac >= 0.8,
        format!(
            "step: peak margin {peak_val:.3e} at {:.2} s, Mann-Kendall z = {z:.2} on 5-window mean after peak (need peak > 0, z < -1.645); poisoning: argmin in {:.0}% of {} windows before t2 (need >= 80%)",
            s.window_times[wins[peak]],
            pfrac * 100.0,
            pw.len()
        ),
    )
}

fn robustness() -> Outcome {
    let argmins = |backend: Backend, kind: DivergenceKind| -> (Vec<Option<usize>>, f64) {
        let out = run_config("paper_timeline.toml", |c| {
            c.window.backend = backend;
            c.window.divergence = kind;
        });
        let s = &out.scores;
        let wins = onset_windows(s);
        let target = target_row(s, &out);
        (
            wins.iter().map(|&w| s.argmin(w)).collect(),
            hit_fraction(s, &wins, target),
        )
    };
    let (reference, ref_frac) = argmins(Backend::Dmd, DivergenceKind::Kl);
    let mut worst = 1.0f64;
    let mut parts = Vec::new();
    for backend in [Backend::Dmd, Backend::Arnoldi, Backend::HankelDmd] {
        for kind in [DivergenceKind::Kl, DivergenceKind::Js] {
            if backend == Backend::Dmd && kind == DivergenceKind::Kl {
                continue;
            }
            let (a, frac) = argmins(backend, kind);
            let agree = a
                .iter()
                .zip(&reference)
                .filter(|(x, y)| x.is_some() && x == y)
                .count() as f64
                / reference.len() as f64;
            worst = worst.min(agree);
            parts.push(format!(
                "{backend}/{kind} {:.0}% (hit {:.0}%)",
                agree * 100.0,
                frac * 100.0
            ));
        }
    }
    outcome(
        worst >= 0.9,
        format!(
            "argmin agreement with dmd/kl (hit {:.0}%) over onset windows: {} (need >= 90%)",
            ref_frac * 100.0,
            parts.join(", ")
        ),
    )
}

fn reproducibility() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_kmsig");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(config_path("paper_timeline.toml"))
            .arg("--out")
            .arg(d.path())
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("kmsig run exited with {status}"));
        }
    }
    let mut names: Vec<String> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(dirs[0].path().join(n)).ok() != fs::read(dirs[1].path().join(n)).ok())
        .collect();
    outcome(
        !names.is_empty() && differing.is_empty(),
        format!(
            "{} CSV files compared, differing: {:?}",
            names.len(),
            differing
        ),
    )
}

fn main() {
    let checks: [Check; 8] = [
        (
            1,
            "koopman oracle equivalence",
            Duration::from_secs(1),
            koopman_oracle,
        ),
        (2, "hankel lift", Duration::from_secs(1), hankel_lift),
        (
            3,
            "normalization and divergence axioms",
            Duration::from_secs(5),
            normalization_axioms,
        ),
        (4, "attack algebra", Duration::from_secs(5), attack_algebra),
        (
            5,
            "grid event vs attack",
            Duration::from_secs(120),
            outlier_vs_event,
        ),
        (
            6,
            "detectability window",
            Duration::from_secs(240),
            detectability_window,
        ),
        (
            7,
            "backend and divergence robustness",
            Duration::from_secs(600),
            robustness,
        ),
        (
            8,
            "reproducibility",
            Duration::from_secs(600),
            reproducibility,
        ),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (n, name, budget, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {n} ({name}): {} [{:.2} s of {} s]{}",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " over time budget" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
