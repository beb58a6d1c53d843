use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kmsig_core::{Backend, Channel, DivergenceKind, WindowConfig};

#[derive(Debug, Parser)]
#[command(
    name = "kmsig",
    version,
    about = "Koopman-mode attack signatures in grid sensor streams"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario's grid and write one clean CSV per channel.
    Simulate(SimulateArgs),
    /// Apply a scenario's attack to a frame CSV.
    Inject(InjectArgs),
    /// Score a frame CSV with the moving-window detector.
    Detect(DetectArgs),
    /// Simulate, inject and detect end to end.
    Run(RunArgs),
    /// Summarize a score table per window.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Dmd,
    Arnoldi,
    Hankel,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Dmd => Backend::Dmd,
            BackendArg::Arnoldi => Backend::Arnoldi,
            BackendArg::Hankel => Backend::HankelDmd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DivergenceArg {
    Kl,
    Js,
}

impl From<DivergenceArg> for DivergenceKind {
    fn from(d: DivergenceArg) -> Self {
        match d {
            DivergenceArg::Kl => DivergenceKind::Kl,
            DivergenceArg::Js => DivergenceKind::Js,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    VoltageAngle,
    VoltageMagnitude,
    Frequency,
    FrequencyDeviation,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::VoltageAngle => Channel::VoltageAngle,
            ChannelArg::VoltageMagnitude => Channel::VoltageMagnitude,
            ChannelArg::Frequency => Channel::Frequency,
            ChannelArg::FrequencyDeviation => Channel::FrequencyDeviation,
        }
    }
}

/// Detector settings that override the scenario's `[window]` table.
#[derive(Debug, Clone, Default, Args)]
pub struct WindowArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    pub divergence: Option<DivergenceArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub learning_len: Option<usize>,
    #[arg(long)]
    pub prediction_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Delay-embedding depth for the hankel backend.
    #[arg(long)]
    pub delay: Option<usize>,
}

impl WindowArgs {
    pub fn apply(&self, base: WindowConfig) -> WindowConfig {
        let mut w = base;
        if let Some(b) = self.backend {
            w.backend = b.into();
        }
        if let Some(d) = self.divergence {
            w.divergence = d.into();
        }
        if let Some(t) = self.tau {
            w.tau = t;
        }
        if let Some(n) = self.learning_len {
            w.learning_len = n;
        }
        if let Some(n) = self.prediction_len {
            w.prediction_len = n;
        }
        if let Some(n) = self.stride {
            w.stride = n;
        }
        if let Some(n) = self.delay {
            w.delay = n;
        }
        w
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the scenario's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Scenario TOML file holding the `[attack]` table.
    #[arg(long)]
    pub config: PathBuf,
    /// Clean frame CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Channel of the input frame; defaults to the attack's channel.
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    /// Seed for poisoning noise; overrides the attack's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Frame CSV to score.
    #[arg(long)]
    pub input: PathBuf,
    /// Scenario TOML whose `[window]` table supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "voltage-angle")]
    pub channel: ChannelArg,
    /// Expected sample period in seconds; checked against the file's timestamps.
    #[arg(long)]
    pub sample_period: Option<f64>,
    /// Ground-truth labels CSV, summarized alongside the scores.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detector channel; overrides the scenario's `channel`.
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Score table written by `detect` or `run`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Labels CSV; marks windows whose argmin is an attacked sensor.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Second score table; reports per-window argmin agreement with the first.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Only windows starting at or after this time (s).
    #[arg(long)]
    pub from: Option<f64>,
    /// Only windows starting at or before this time (s).
    #[arg(long)]
    pub to: Option<f64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}
