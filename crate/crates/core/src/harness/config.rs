use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::{AgentConfig, AgentKind};
use crate::env::sagin::SaginScenario;
use crate::env::uav::UavScenario;
use crate::exec::Exec;
use crate::llm::MockScript;
use crate::roles::{DesignTask, GuidanceSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub states: usize,
    pub left_reward: f64,
    pub right_reward: f64,
    pub gamma: f64,
    pub max_steps: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            states: 5,
            left_reward: 0.5,
            right_reward: 1.0,
            gamma: 0.9,
            max_steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Uav {
        #[serde(default)]
        scenario: UavScenario,
        /// JSON scenario file; replaces `scenario` when given.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario_path: Option<PathBuf>,
    },
    Sagin {
        #[serde(default)]
        scenario: SaginScenario,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario_path: Option<PathBuf>,
    },
    Chain {
        #[serde(default)]
        scenario: ChainConfig,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// The manual expression when one is configured, else the built-in reward.
    #[default]
    Manual,
    ScriptedEnriched,
    LlmDesigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub task: DesignTask,
    /// Features offered to the designer; all environment features when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    /// Probe ranges; a missing feature gets `[0, scale]`.
    #[serde(default)]
    pub ranges: BTreeMap<String, (f64, f64)>,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_probes")]
    pub probe_count: usize,
    /// Ask the model for probe states before falling back to the grid.
    #[serde(default)]
    pub model_probes: bool,
}

fn default_candidates() -> usize {
    3
}

fn default_probes() -> usize {
    64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// DSL source of the manual reward.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manual: Option<String>,
    /// DSL source of the enriched reward.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enriched: Option<String>,
    pub constants: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    #[default]
    Off,
    /// Replies generated from `plan`, served by a mock.
    Scripted,
    /// Replies from the configured backend.
    Llm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub settings: GuidanceSettings,
    /// Per-intervention multiplicative factor for each named hyperparameter.
    pub plan: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        design: Option<MockScript>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        design_path: Option<PathBuf>,
        /// Guider replies; each seed gets its own copy.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        guidance: Option<MockScript>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        guidance_path: Option<PathBuf>,
    },
    Http {
        base_url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_retries() -> u32 {
    2
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            design: None,
            design_path: None,
            guidance: None,
            guidance_path: None,
        }
    }
}

/// Episode-level exploration schedule; its value is handed to the agent as
/// the uniform-random action probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epsilon0: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub agent: AgentKind,
    /// Defaults to [`AgentConfig::dqn`] for DQN and [`AgentConfig::default`]
    /// otherwise; fields missing from a given object take the generic defaults.
    #[serde(default)]
    pub agent_config: AgentConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploration: Option<ScheduleConfig>,
    /// Environment steps per gradient update.
    #[serde(default = "default_train_every")]
    pub train_every: usize,
    /// Episodes in the final window; `max(ceil(E/10), 10)` capped at `E` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_window: Option<usize>,
    #[serde(default)]
    pub exec: Exec,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_train_every() -> usize {
    1
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str) -> Result<Self, HarnessError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let explicit_agent = value.get("agent_config").is_some();
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))?;
        if !explicit_agent && cfg.agent == AgentKind::Dqn {
            cfg.agent_config = AgentConfig::dqn();
        }
        Ok(cfg)
    }

    /// Reads a config file and inlines every referenced scenario or mock
    /// script; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.env {
            EnvConfig::Uav { scenario, scenario_path } => {
                if let Some(p) = scenario_path.take() {
                    *scenario = read_json(&resolve(base, &p))?;
                }
            }
            EnvConfig::Sagin { scenario, scenario_path } => {
                if let Some(p) = scenario_path.take() {
                    *scenario = read_json(&resolve(base, &p))?;
                }
            }
            EnvConfig::Chain { .. } => {}
        }
        if let BackendConfig::Mock {
            design,
            design_path,
            guidance,
            guidance_path,
        } = &mut cfg.backend
        {
            if let Some(p) = design_path.take() {
                *design = Some(read_json(&resolve(base, &p))?);
            }
            if let Some(p) = guidance_path.take() {
                *guidance = Some(read_json(&resolve(base, &p))?);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("id '{}' must be non-empty and use only [A-Za-z0-9._-]", self.id));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.train_every == 0 {
            return bad("train_every must be positive".into());
        }
        if let Some(w) = self.final_window {
            if w == 0 || w > self.episodes {
                return bad(format!("final_window {w} must lie in 1..={}", self.episodes));
            }
        }
        self.agent_config.validate()?;
        if let Some(s) = &self.exploration {
            crate::env::sagin::ExplorationSchedule::new(s.epsilon0, self.episodes, s.decay)?;
        }
        match (&self.env, self.agent) {
            (EnvConfig::Chain { .. }, AgentKind::Dqn) => {}
            (EnvConfig::Chain { .. }, k) => return bad(format!("{} needs a continuous environment", k.name())),
            (_, AgentKind::Dqn) => return bad("dqn needs the discrete chain environment".into()),
            _ => {}
        }
        if let EnvConfig::Chain { scenario } = &self.env {
            if scenario.states < 3 || scenario.max_steps == 0 {
                return bad("chain needs at least 3 states and a positive step limit".into());
            }
        }
        let r = &self.reward;
        match r.mode {
            RewardMode::ScriptedEnriched if r.enriched.is_none() && !matches!(self.env, EnvConfig::Uav { .. }) => {
                return bad("scripted-enriched mode needs reward.enriched for this environment".into())
            }
            RewardMode::LlmDesigned => match &r.design {
                None => return bad("llm-designed mode needs reward.design".into()),
                Some(d) if d.n_candidates == 0 || d.probe_count < 2 => {
                    return bad("design needs at least one candidate and two probes".into())
                }
                _ => {}
            },
            _ => {}
        }
        let g = &self.guidance;
        if g.mode != GuidanceMode::Off {
            crate::roles::GuidanceController::new(g.settings)?;
        }
        if g.mode == GuidanceMode::Scripted && g.plan.is_empty() {
            return bad("scripted guidance needs a non-empty plan".into());
        }
        if let Some((n, f)) = g.plan.iter().find(|(_, f)| !(**f > 0.0 && f.is_finite())) {
            return bad(format!("plan factor for {n} must be positive, got {f}"));
        }
        Ok(())
    }

    /// Final-window length in episodes.
    pub fn window(&self) -> usize {
        self.final_window.unwrap_or_else(|| super::default_window(self.episodes))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"id": "t", "env": {"kind": "chain"}, "agent": "dqn", "seeds": [1], "episodes": 3}"#
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        assert_eq!(c.reward.mode, RewardMode::Manual);
        assert_eq!(c.guidance.mode, GuidanceMode::Off);
        assert_eq!(c.train_every, 1);
        assert_eq!(c.window(), 3);
        assert_eq!(c.agent_config, AgentConfig::dqn());
        assert_eq!(c.run_dir(), PathBuf::from("out/t"));
    }

    #[test]
    fn validation_rejects_bad_fields() {
        for (from, to) in [
            (r#""episodes": 3"#, r#""episodes": 0"#),
            (r#""seeds": [1]"#, r#""seeds": []"#),
            (r#""seeds": [1]"#, r#""seeds": [1, 1]"#),
            (r#""agent": "dqn""#, r#""agent": "td3""#),
            (r#""id": "t""#, r#""id": "a/b""#),
        ] {
            let text = minimal().replace(from, to);
            let err = ExperimentConfig::from_json(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = minimal().replace(r#""episodes": 3"#, r#""episodes": 3, "epsiodes": 4"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn reward_modes_parse_kebab_case() {
        let m: RewardMode = serde_json::from_str(r#""scripted-enriched""#).unwrap();
        assert_eq!(m, RewardMode::ScriptedEnriched);
        let m: RewardMode = serde_json::from_str(r#""llm-designed""#).unwrap();
        assert_eq!(m, RewardMode::LlmDesigned);
    }

    #[test]
    fn load_inlines_scenario_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.json"), r#"{"satellites": 3, "horizon": 7}"#).unwrap();
        std::fs::write(
            dir.path().join("c.json"),
            r#"{"id": "s", "env": {"kind": "sagin", "scenario_path": "s.json"}, "agent": "tqc", "seeds": [0], "episodes": 2}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&dir.path().join("c.json")).unwrap();
        match c.env {
            EnvConfig::Sagin { scenario, scenario_path } => {
                assert_eq!((scenario.satellites, scenario.horizon), (3, 7));
                assert!(scenario_path.is_none());
            }
            _ => panic!("wrong env"),
        }
    }
}
