//! Shared fixtures for the pipeline benchmarks.

use std::path::Path;

use kmsig_core::scenario::ScenarioConfig;
use kmsig_core::{Channel, SnapshotMatrix, TimeSeriesFrame};

/// Scenario with a load step at 5 s and a step attack on one bus from 10 s.
pub const SCENARIO: &str = r#"
duration = 30.0
seed = 7

[noise]
voltage_angle = 5e-4

[[events]]
bus = 52
start_time = 5.0
delta_load = 0.5

[attack]
type = "step"
targets = ["bus27"]
t1 = 10.0
t2 = 25.0
c = 0.1
"#;

pub fn scenario() -> ScenarioConfig {
    ScenarioConfig::from_toml(SCENARIO, Path::new(".")).expect("fixture scenario parses")
}

/// Clean voltage-angle frame from the fixture scenario.
pub fn angle_frame() -> TimeSeriesFrame {
    scenario()
        .run()
        .expect("fixture scenario runs")
        .sim
        .frame(Channel::VoltageAngle)
        .clone()
}

/// The first `len` samples of `frame` as a snapshot matrix.
pub fn snapshots(frame: &TimeSeriesFrame, len: usize) -> SnapshotMatrix {
    let data = frame.values().columns(0, len).into_owned();
    SnapshotMatrix::new(data, frame.sample_period()).expect("fixture snapshots are valid")
}
