//! Koopman-mode signatures of false data injection in streaming grid measurements.
//!
//! The crate covers the whole pipeline: a swing-equation grid simulator that produces
//! PMU-like channels ([`gridsim`]), sensor-level attack injection ([`attack`]),
//! empirical Koopman predictors with three backends ([`koopman`]), the moving-window
//! Δ-score detector ([`detector`]), CSV plumbing ([`io`]) and scenario orchestration
//! ([`scenario`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // the negations also reject NaN

pub mod attack;
pub mod detector;
pub mod frame;
pub mod gridsim;
pub mod io;
pub mod koopman;
pub mod scenario;

pub use attack::{inject, AttackSpec, AttackType, AttackedFrame};
pub use detector::{DeltaScoreSeries, DivergenceKind, NormalizedKM, WindowConfig};
pub use frame::{Channel, TimeSeriesFrame};
pub use gridsim::{GridEvent, NetworkModel};
pub use koopman::{fit, Backend, FitOptions, KoopmanModel, SnapshotMatrix};
