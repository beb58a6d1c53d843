//! Desk-scale multi-machine grid simulator producing PMU-like measurement streams.

mod network;
mod sim;

use thiserror::Error;

pub use network::{
    build_network, GeneratorEntry, LineEntry, LoadEntry, NetworkConfigFile, NetworkModel,
};
pub use sim::{
    simulate, AngleFeedback, GridEvent, NoiseStd, SimConfig, SimOutput, Simulator, SUBSTEPS,
};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("network config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("simulation config: {0}")]
    Config(String),
    #[error("no steady-state operating point for the base loading")]
    NoEquilibrium,
    #[error("integration diverged at t = {time:.4} s")]
    Diverged { time: f64 },
}
