//! Language-model roles: reward designer, probe generator, decision guider
//! and a text-only state perceiver.

mod designer;
mod guider;
mod hyper;
mod perceiver;
mod probes;

pub use designer::{
    assess_candidate, design_reward, select_candidate, write_ledger, CandidateRecord, DesignOutcome, DesignTask,
};
pub use guider::{
    check_rollback, guide, AppliedChange, GuidanceController, GuidanceDirective, GuidanceReport, GuidanceSettings,
    LossStats, Proposal, RollbackDecision, RollbackGuard,
};
pub use hyper::{Hyperparam, HyperparamSet, RateLimit};
pub use perceiver::{perceive, perceive_mock, telemetry_statistics};
pub use probes::{fallback_grid, generate_probe_samples, ProbeSet};

use thiserror::Error;

use crate::llm::LlmError;
use crate::reward::DslError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoleError {
    #[error("invalid role configuration: {0}")]
    Config(String),
    #[error("no candidate passed validation ({} generated)", ledger.len())]
    DesignFailed { ledger: Vec<CandidateRecord> },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("i/o: {0}")]
    Io(String),
}
