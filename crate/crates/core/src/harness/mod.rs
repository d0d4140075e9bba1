//! Experiment runner: JSON configuration, multi-seed training with reward
//! modes and guidance, JSONL persistence and arm-vs-arm summaries.

mod config;
mod run;
mod summary;

pub use config::{
    BackendConfig, ChainConfig, DesignConfig, EnvConfig, ExperimentConfig, GuidanceConfig, GuidanceMode, RewardConfig,
    RewardMode, ScheduleConfig,
};
pub use run::{
    build_env, design_for, guidance_script, load_rows, reset_seed, resolve_reward, run_experiment, run_seed, EpisodeRow,
    RunRecord, RunSet, SeedSummary, UAV_DEFAULT_CONSTANTS,
};
pub use summary::{default_window, sign_test, summarize, write_csv, ArmStats, Comparison, Metric};

use thiserror::Error;

use crate::agents::AgentError;
use crate::llm::LlmError;
use crate::mdp::EnvError;
use crate::roles::RoleError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("i/o on {path}: {message}")]
    Io { path: String, message: String },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    fn root(&self) -> &HarnessError {
        match self {
            HarnessError::Seed { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for configuration or validation failures, 3
    /// when the language-model backend fails, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            HarnessError::Config(_) | HarnessError::Env(EnvError::Config(_)) | HarnessError::Agent(AgentError::Config(_)) => 2,
            HarnessError::Role(RoleError::Config(_) | RoleError::DesignFailed { .. } | RoleError::Dsl(_)) => 2,
            HarnessError::Role(RoleError::Llm(e)) | HarnessError::Llm(e) => llm_code(e),
            _ => 1,
        }
    }
}

fn llm_code(e: &LlmError) -> i32 {
    match e {
        LlmError::Template(_) | LlmError::UnboundVariable { .. } | LlmError::Request(_) => 2,
        _ => 3,
    }
}
