//! Environment interface, transition records, discounted returns and a
//! plain episode runner.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{DslError, RewardFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("step called after the episode finished; call reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("reward override rejected: {0}")]
    Reward(#[from] DslError),
    #[error("policy failed: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionSpace {
    Discrete {
        n: usize,
    },
    Continuous {
        low: Vec<f64>,
        high: Vec<f64>,
    },
    /// One discrete choice among `choices` plus a split of a unit budget
    /// over `parts`, both driven by a single continuous logit vector.
    Hybrid {
        choices: usize,
        parts: usize,
        logit_scale: f64,
    },
}

impl ActionSpace {
    /// Width of the vector an agent emits for this space.
    pub fn agent_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { n } => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
            ActionSpace::Hybrid { choices, parts, .. } => choices + parts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub gamma: f64,
    pub max_steps: usize,
    pub feature_names: Vec<String>,
    /// Typical magnitude of each feature; agents divide by it before
    /// feeding networks.
    pub feature_scales: Vec<f64>,
}

impl EnvSpec {
    pub fn new(
        name: impl Into<String>,
        action_space: ActionSpace,
        gamma: f64,
        max_steps: usize,
        features: Vec<(String, f64)>,
    ) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(EnvError::Config(format!("gamma {gamma} outside [0, 1]")));
        }
        if max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        if features.is_empty() {
            return Err(EnvError::Config("state must have at least one feature".into()));
        }
        if let Some((n, s)) = features.iter().find(|(_, s)| !(*s > 0.0 && s.is_finite())) {
            return Err(EnvError::Config(format!("feature {n} has invalid scale {s}")));
        }
        match &action_space {
            ActionSpace::Discrete { n } if *n == 0 => {
                return Err(EnvError::Config("discrete action space needs n > 0".into()))
            }
            ActionSpace::Continuous { low, high }
                if low.is_empty()
                    || low.len() != high.len()
                    || low.iter().zip(high).any(|(l, h)| !(l < h)) =>
            {
                return Err(EnvError::Config("continuous bounds must satisfy low < high".into()))
            }
            ActionSpace::Hybrid { choices, parts, .. } if *choices == 0 || *parts == 0 => {
                return Err(EnvError::Config("hybrid action needs choices and parts".into()))
            }
            _ => {}
        }
        let (feature_names, feature_scales): (Vec<_>, Vec<_>) = features.into_iter().unzip();
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(EnvError::Config(format!("duplicate feature name {dup}")));
        }
        Ok(EnvSpec {
            name: name.into(),
            state_dim: feature_names.len(),
            action_space,
            gamma,
            max_steps,
            feature_names,
            feature_scales,
        })
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
    Hybrid {
        choice: usize,
        fractions: Vec<f64>,
        /// The raw agent output the decision was decoded from.
        logits: Vec<f64>,
    },
}

impl Action {
    /// Vector the agent learns from: the continuous action, the raw hybrid
    /// logits, or a one-element index for discrete actions.
    pub fn agent_vector(&self) -> Vec<f64> {
        match self {
            Action::Discrete(i) => vec![*i as f64],
            Action::Continuous(v) => v.clone(),
            Action::Hybrid { logits, .. } => logits.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    /// Feasibility mask over discrete choices, when the environment has one.
    pub mask: Option<Vec<bool>>,
}

impl Observation {
    pub fn new(values: Vec<f64>) -> Self {
        Observation { values, mask: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended by reaching a terminal state rather than
    /// the step limit.
    pub terminal: bool,
    pub telemetry: BTreeMap<String, f64>,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic initial state for `seed`; clears the step counter.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// `done` caused by a terminal state (no bootstrapping) rather than the
    /// horizon.
    pub terminal: bool,
    pub step_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
    pub seed: u64,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

/// `sum_k gamma^k r_k`, accumulated front to back.
pub fn compute_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

pub trait Policy {
    fn act(&mut self, observation: &Observation) -> Result<Action, EnvError>;
}

impl<F> Policy for F
where
    F: FnMut(&Observation) -> Action,
{
    fn act(&mut self, observation: &Observation) -> Result<Action, EnvError> {
        Ok(self(observation))
    }
}

/// Rolls out one episode. With `reward_fn`, every logged reward is the
/// override evaluated on the post-step features instead of the built-in one.
pub fn run_episode<E, P>(
    env: &mut E,
    policy: &mut P,
    seed: u64,
    reward_fn: Option<&RewardFunction>,
) -> Result<Episode, EnvError>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let bound = reward_fn
        .map(|f| f.bind(&env.spec().feature_names))
        .transpose()?;
    let mut obs = env.reset(seed);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    for step_index in 0.. {
        let action = policy.act(&obs)?;
        let out = env.step(&action)?;
        let reward = match &bound {
            Some(b) => b.evaluate(&out.observation.values)?,
            None => out.reward,
        };
        total += reward;
        transitions.push(Transition {
            state: obs.values,
            action,
            reward,
            next_state: out.observation.values.clone(),
            done: out.done,
            terminal: out.terminal,
            step_index,
            next_mask: out.observation.mask.clone(),
        });
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(Episode {
        transitions,
        total_reward: total,
        seed,
    })
}
