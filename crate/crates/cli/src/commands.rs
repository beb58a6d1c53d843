use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use kmsig_core::attack::inject;
use kmsig_core::detector::run_frame;
use kmsig_core::io::{read_frame_csv, read_labels_csv, read_window_table};
use kmsig_core::scenario::ScenarioConfig;
use kmsig_core::{Channel, DeltaScoreSeries, WindowConfig};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::{DetectArgs, InjectArgs, ReportArgs, RunArgs, SimulateArgs};
use crate::output::{sha256_hex, OutputDir, Summary};
use crate::InputError;

/// Scenario plus the hash of the bytes it was parsed from.
fn load_scenario(path: &Path) -> Result<(ScenarioConfig, String)> {
    let bytes =
        fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| InputError(format!("{} is not UTF-8", path.display())))?;
    let cfg = ScenarioConfig::from_toml(&text, path)?;
    Ok((cfg, sha256_hex(&bytes)))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())).into())
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let (mut cfg, hash) = load_scenario(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let net = cfg.network_model()?;
    cfg.validate(&net)?;
    let sim = kmsig_core::gridsim::simulate(&net, &cfg.events, &cfg.sim_config())?;
    let mut out = OutputDir::create(&out_dir(&args.out, &cfg))?;
    for c in Channel::ALL {
        out.frame(&format!("clean_{c}.csv"), sim.frame(c))?;
    }
    out.finish("simulate", Some(cfg.seed), Some(hash), None)
}

pub fn inject_cmd(args: &InjectArgs) -> Result<()> {
    let (cfg, hash) = load_scenario(&args.config)?;
    let mut spec = cfg
        .attack
        .clone()
        .ok_or_else(|| InputError(format!("{} has no [attack] table", args.config.display())))?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let channel = args.channel.map(Channel::from).unwrap_or(spec.channel);
    let frame = read_frame_csv(open(&args.input)?, channel, None)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let spec = spec.resolved(&frame)?;
    let attacked = inject(&frame, &spec)?;
    let mut out = OutputDir::create(&out_dir(&args.out, &cfg))?;
    out.frame(&format!("attacked_{channel}.csv"), &attacked.frame)?;
    out.labels(frame.sensor_ids(), &attacked.ground_truth)?;
    out.finish("inject", Some(spec.seed), Some(hash), None)
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let (base, hash) = match &args.config {
        Some(p) => {
            let (cfg, hash) = load_scenario(p)?;
            (cfg.window, Some(hash))
        }
        None => (WindowConfig::default(), None),
    };
    let window = args.window.apply(base);
    window.validate()?;
    let frame = read_frame_csv(open(&args.input)?, args.channel.into(), args.sample_period)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let labels = match &args.labels {
        Some(p) => Some(align_labels(frame.sensor_ids(), p)?),
        None => None,
    };
    let series = run_frame(&frame, &window)?;
    let mut out = OutputDir::create(&args.out)?;
    out.scores(&series, labels.as_deref())?;
    out.finish("detect", None, hash, Some(window))
}

fn align_labels(ids: &[String], path: &Path) -> Result<Vec<bool>> {
    let labels =
        read_labels_csv(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    ids.iter()
        .map(|id| {
            labels
                .iter()
                .find(|(l, _)| l == id)
                .map(|(_, a)| *a)
                .ok_or_else(|| {
                    InputError(format!("{} has no label for `{id}`", path.display())).into()
                })
        })
        .collect()
}

pub fn run(args: &RunArgs) -> Result<()> {
    let (mut cfg, hash) = load_scenario(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
        if let Some(a) = cfg.attack.as_mut() {
            a.seed = s;
        }
    }
    if let Some(c) = args.channel {
        cfg.channel = c.into();
    }
    cfg.window = args.window.apply(cfg.window);
    let outcome = cfg.run()?;
    let mut out = OutputDir::create(&out_dir(&args.out, &cfg))?;
    for c in Channel::ALL {
        out.frame(&format!("clean_{c}.csv"), outcome.sim.frame(c))?;
    }
    if let Some(a) = &outcome.attacked {
        out.frame(&format!("attacked_{}.csv", a.spec.channel), &a.frame)?;
    }
    out.labels(outcome.observed.sensor_ids(), &outcome.labels)?;
    out.scores(&outcome.scores, Some(&outcome.labels))?;
    out.finish("run", Some(cfg.seed), Some(hash), Some(cfg.window))
}

fn load_scores(path: &Path) -> Result<DeltaScoreSeries> {
    let (ids, times, scores) =
        read_window_table(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(DeltaScoreSeries {
        sensor_ids: ids,
        window_times: times,
        distances: DMatrix::zeros(scores.nrows(), scores.ncols()),
        scores,
    })
}

#[derive(Debug, Serialize)]
struct Report {
    #[serde(flatten)]
    summary: Summary,
    /// Share of selected windows whose argmin matches the compared table.
    argmin_agreement: Option<f64>,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut series = load_scores(&args.scores)?;
    let keep = series.windows_between(
        args.from.unwrap_or(f64::NEG_INFINITY),
        args.to.unwrap_or(f64::INFINITY),
    );
    series = select_windows(&series, &keep);
    let labels = match &args.labels {
        Some(p) => Some(align_labels(&series.sensor_ids, p)?),
        None => None,
    };
    let agreement = match &args.compare {
        Some(p) => {
            let other = load_scores(p)?;
            if other.sensor_ids != series.sensor_ids {
                return Err(
                    InputError("compared score tables have different sensors".into()).into(),
                );
            }
            Some(argmin_agreement(&series, &other)?)
        }
        None => None,
    };
    let summary = Summary::new(&series, labels.as_deref());
    if args.json {
        let report = Report {
            summary,
            argmin_agreement: agreement,
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "{:>12} {:>16} {:>12} {:>12}",
        "window_time", "argmin", "score", "margin"
    );
    for row in &summary.windows {
        let w = &row.window;
        let mark = if row.argmin_attacked == Some(true) {
            " *"
        } else {
            ""
        };
        println!(
            "{:>12.4} {:>16} {:>12} {:>12}{mark}",
            w.window_time,
            w.argmin_sensor.as_deref().unwrap_or("-"),
            w.min_score.map_or("-".into(), |s| format!("{s:.6}")),
            w.margin.map_or("-".into(), |s| format!("{s:.6}")),
        );
    }
    if let Some(n) = summary.attacked_argmin_windows {
        println!(
            "attacked sensor is argmin in {n} of {} windows",
            summary.n_windows
        );
    }
    if let Some(a) = agreement {
        println!("argmin agreement: {:.4}", a);
    }
    Ok(())
}

fn select_windows(series: &DeltaScoreSeries, keep: &[usize]) -> DeltaScoreSeries {
    DeltaScoreSeries {
        sensor_ids: series.sensor_ids.clone(),
        window_times: keep.iter().map(|&w| series.window_times[w]).collect(),
        scores: series.scores.select_rows(keep),
        distances: series.distances.select_rows(keep),
    }
}

/// Share of `a`'s windows whose argmin equals `b`'s at the same window time.
fn argmin_agreement(a: &DeltaScoreSeries, b: &DeltaScoreSeries) -> Result<f64> {
    if a.n_windows() == 0 {
        return Err(anyhow!("no windows selected"));
    }
    let mut hits = 0;
    for (w, t) in a.window_times.iter().enumerate() {
        let v = b
            .window_times
            .iter()
            .position(|u| (u - t).abs() < 1e-9)
            .ok_or_else(|| InputError(format!("compared table lacks window {t}")))?;
        if a.argmin(w).is_some() && a.argmin(w) == b.argmin(v) {
            hits += 1;
        }
    }
    Ok(hits as f64 / a.n_windows() as f64)
}
