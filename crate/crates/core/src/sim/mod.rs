//! Discrete-event simulation of the polled link.

mod engine;
mod report;
mod scenario;

use thiserror::Error;

pub use engine::{run_scenario, run_scenario_with, DumpedWaveform, RunOptions, RunOutput};
pub use report::{
    emit_report, write_report_dir, LinkReport, NodeReport, PollRecord, Report, ReportFormat, Role,
    TimelineRecord,
};
pub use scenario::{
    Injection, MasterSpec, NodeId, Poll, PollRounds, Scenario, SlaveSpec, DEFAULT_MASTER_ADDRESS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config at {path}: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
