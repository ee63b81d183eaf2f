//! Experiment harness: scenario configuration, closed-loop runs, proximity
//! sweeps and their exports.

pub mod config;
pub mod run;
pub mod sweep;
pub mod timing;
pub mod trace;

use thiserror::Error;

use crate::nmhe::NmheError;
use crate::nmpc::NmpcError;

pub use config::{Calibration, ControllerKind, ScenarioConfig, SweepConfig, Timeline};
pub use run::{run_scenario, RunOutput, RunSummary};
pub use sweep::{sweep, CellSummary, SweepResult};
pub use timing::{report_timings, TimingRow, TimingSummary};
pub use trace::{hold_stats, recompute_hold_stats, HoldStats, Phase, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Estimator(#[from] NmheError),
    #[error(transparent)]
    Controller(#[from] NmpcError),
}
