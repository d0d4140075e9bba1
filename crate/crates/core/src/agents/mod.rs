//! DQN, DDPG, TD3 and TQC over the shared [`Mlp`](crate::nn::Mlp) substrate.
//!
//! Continuous agents act in the normalized box `[-1, 1]^d` and an
//! [`ActionCodec`] maps that to the environment's action space. Hybrid
//! actions split the vector into choice logits (masked argmax) and
//! allocation logits (softmax).

mod ddpg;
mod dqn;
mod td3;
mod tqc;

pub use ddpg::Ddpg;
pub use dqn::Dqn;
pub use td3::Td3;
pub use tqc::{quantile_huber, tqc_truncated_target, Tqc};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, ActionSpace, EnvSpec, Observation, Transition};
use crate::nn::{Activation, Mlp, NnError, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Ddpg,
    Td3,
    Tqc,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Td3 => "td3",
            AgentKind::Tqc => "tqc",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(AgentKind::Dqn),
            "ddpg" => Ok(AgentKind::Ddpg),
            "td3" => Ok(AgentKind::Td3),
            "tqc" => Ok(AgentKind::Tqc),
            other => Err(AgentError::Config(format!("unknown agent '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Overrides the environment discount when set.
    pub gamma: Option<f64>,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Gaussian action noise (continuous agents, normalized units).
    pub exploration_noise: f64,
    /// Probability of a uniformly random action when exploring.
    pub epsilon: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub n_critics: usize,
    pub n_quantiles: usize,
    pub k_drop_per_critic: usize,
    pub entropy_alpha: f64,
    /// Multiplies every reward before it enters a target.
    pub reward_scale: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: None,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup: 1_000,
            exploration_noise: 0.1,
            epsilon: 0.0,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            n_critics: 2,
            n_quantiles: 25,
            k_drop_per_critic: 2,
            entropy_alpha: 0.2,
            reward_scale: 1.0,
            max_grad_norm: Some(10.0),
        }
    }
}

impl AgentConfig {
    /// Defaults for DQN: fixed epsilon 0.1 and a faster target.
    pub fn dqn() -> Self {
        AgentConfig {
            epsilon: 0.1,
            tau: 0.01,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("gamma {g} outside [0, 1]"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch size and buffer capacity must be positive".into());
        }
        if self.policy_delay == 0 || self.n_critics == 0 || self.n_quantiles == 0 {
            return bad("policy_delay, n_critics and n_quantiles must be positive".into());
        }
        if self.k_drop_per_critic >= self.n_quantiles {
            return bad(format!(
                "k_drop_per_critic {} must be below n_quantiles {}",
                self.k_drop_per_critic, self.n_quantiles
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.exploration_noise >= 0.0
            && self.target_noise >= 0.0
            && self.target_noise_clip >= 0.0
            && self.entropy_alpha >= 0.0)
        {
            return bad("noise scales and alpha must be non-negative".into());
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be positive".into());
        }
        Ok(())
    }
}

/// State captured when training produces a non-finite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub agent: String,
    pub quantity: String,
    pub value: f64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub batch_reward_min: f64,
    pub batch_reward_max: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no feasible action: every mask entry is false")]
    Infeasible,
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("observation has {found} values, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("action does not fit the agent: {0}")]
    Action(String),
    #[error("unknown hyperparameter '{0}'")]
    UnknownHyperparameter(String),
    #[error("non-finite {} ({}) after {} critic updates", .0.quantity, .0.value, .0.critic_updates)]
    NonFinite(Box<Diagnostic>),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub critic: f64,
    /// Present on steps that updated the actor.
    pub actor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrainStatus {
    Skipped { have: usize, need: usize },
    Trained(LossSummary),
}

pub trait Agent: Send {
    fn kind(&self) -> AgentKind;

    /// Picks an action for `observation`, honouring its mask. Without
    /// exploration the choice is deterministic.
    fn select_action(&mut self, observation: &Observation, explore: bool) -> Result<Action, AgentError>;

    /// One gradient update from a sampled minibatch, or `Skipped` while the
    /// buffer holds fewer than `max(batch_size, warmup)` transitions.
    fn train_step(&mut self, buffer: &ReplayBuffer<Transition>) -> Result<TrainStatus, AgentError>;

    /// Current exploration statistic: epsilon, noise scale or alpha.
    fn exploration(&self) -> f64;

    /// Sets the probability of a uniformly random action.
    fn set_epsilon(&mut self, epsilon: f64);

    fn hyperparameter(&self, name: &str) -> Option<f64>;

    fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), AgentError>;

    fn critic_updates(&self) -> u64;

    fn actor_updates(&self) -> u64;
}

/// Builds an agent for `spec`. DQN needs a discrete space; the others need
/// a continuous or hybrid one.
pub fn build_agent(
    kind: AgentKind,
    config: &AgentConfig,
    spec: &EnvSpec,
    seed: u64,
) -> Result<Box<dyn Agent>, AgentError> {
    Ok(match kind {
        AgentKind::Dqn => Box::new(Dqn::new(config.clone(), spec, seed)?),
        AgentKind::Ddpg => Box::new(Ddpg::new(config.clone(), spec, seed)?),
        AgentKind::Td3 => Box::new(Td3::new(config.clone(), spec, seed)?),
        AgentKind::Tqc => Box::new(Tqc::new(config.clone(), spec, seed)?),
    })
}

/// Index of the largest value among entries allowed by `mask`; the first
/// one wins ties.
pub fn masked_argmax(values: &[f64], mask: Option<&[bool]>) -> Result<usize, AgentError> {
    if let Some(m) = mask {
        if m.len() != values.len() {
            return Err(AgentError::Shape {
                expected: values.len(),
                found: m.len(),
            });
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(AgentError::Infeasible)
}

fn softmax(logits: &[f64], scale: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
    let exps: Vec<f64> = logits.iter().map(|&l| (l * scale - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Maps between the agent's normalized vector and environment actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCodec {
    space: ActionSpace,
}

impl ActionCodec {
    pub fn new(space: ActionSpace) -> Self {
        ActionCodec { space }
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.agent_dim()
    }

    /// `a` must lie in `[-1, 1]^dim`.
    pub fn decode(&self, a: &[f64], mask: Option<&[bool]>) -> Result<Action, AgentError> {
        if a.len() != self.dim() {
            return Err(AgentError::Action(format!(
                "agent vector has {} entries, expected {}",
                a.len(),
                self.dim()
            )));
        }
        match &self.space {
            ActionSpace::Discrete { .. } => Ok(Action::Discrete(masked_argmax(a, mask)?)),
            ActionSpace::Continuous { low, high } => Ok(Action::Continuous(
                a.iter()
                    .zip(low.iter().zip(high))
                    .map(|(&x, (&lo, &hi))| (lo + (x + 1.0) * 0.5 * (hi - lo)).clamp(lo, hi))
                    .collect(),
            )),
            ActionSpace::Hybrid {
                choices,
                logit_scale,
                ..
            } => Ok(Action::Hybrid {
                choice: masked_argmax(&a[..*choices], mask)?,
                fractions: softmax(&a[*choices..], *logit_scale),
                logits: a.to_vec(),
            }),
        }
    }

    /// Inverse of [`decode`](Self::decode) for continuous and hybrid actions.
    pub fn encode(&self, action: &Action) -> Result<Vec<f64>, AgentError> {
        match (&self.space, action) {
            (ActionSpace::Continuous { low, high }, Action::Continuous(v)) if v.len() == low.len() => Ok(v
                .iter()
                .zip(low.iter().zip(high))
                .map(|(&x, (&lo, &hi))| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
                .collect()),
            (ActionSpace::Hybrid { .. }, Action::Hybrid { logits, .. }) if logits.len() == self.dim() => {
                Ok(logits.clone())
            }
            (_, other) => Err(AgentError::Action(format!(
                "{other:?} does not match {:?}",
                self.space
            ))),
        }
    }
}

/// Divides raw observations by the environment's feature scales.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Normalizer {
    inv: Vec<f64>,
}

impl Normalizer {
    pub(crate) fn new(spec: &EnvSpec) -> Self {
        Normalizer {
            inv: spec.feature_scales.iter().map(|s| 1.0 / s).collect(),
        }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        if x.len() != self.inv.len() {
            return Err(AgentError::Shape {
                expected: self.inv.len(),
                found: x.len(),
            });
        }
        Ok(x.iter().zip(&self.inv).map(|(v, s)| v * s).collect())
    }
}

pub(crate) fn network(sizes_in: usize, hidden: &[usize], out: usize, output: Activation, rng: &mut ChaCha8Rng) -> Mlp {
    let mut sizes = vec![sizes_in];
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    Mlp::new(&sizes, Activation::Relu, output, rng).expect("layer sizes are positive")
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn uniform_action(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

pub(crate) fn check_finite(
    agent: AgentKind,
    quantity: &str,
    value: f64,
    critic_updates: u64,
    actor_updates: u64,
    batch: &[&Transition],
) -> Result<(), AgentError> {
    if value.is_finite() {
        return Ok(());
    }
    let (lo, hi) = batch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t.reward), hi.max(t.reward))
    });
    Err(AgentError::NonFinite(Box::new(Diagnostic {
        agent: agent.name().into(),
        quantity: quantity.into(),
        value,
        critic_updates,
        actor_updates,
        batch_reward_min: lo,
        batch_reward_max: hi,
    })))
}

pub(crate) fn ready(buffer: &ReplayBuffer<Transition>, config: &AgentConfig) -> Option<TrainStatus> {
    let need = config.batch_size.max(config.warmup);
    (buffer.len() < need).then_some(TrainStatus::Skipped {
        have: buffer.len(),
        need,
    })
}

pub(crate) fn resolve_gamma(config: &AgentConfig, spec: &EnvSpec) -> f64 {
    config.gamma.unwrap_or(spec.gamma)
}

/// Adapts the shared hyperparameter names to a config; `learning_rate`
/// moves the critic rate and keeps the actor/critic ratio.
pub(crate) fn set_common(config: &mut AgentConfig, name: &str, value: f64) -> Result<bool, AgentError> {
    if !value.is_finite() {
        return Err(AgentError::Config(format!("{name} must be finite")));
    }
    match name {
        "learning_rate" => {
            if value <= 0.0 {
                return Err(AgentError::Config("learning_rate must be positive".into()));
            }
            let ratio = config.actor_lr / config.critic_lr;
            config.critic_lr = value;
            config.actor_lr = value * ratio;
        }
        "tau" => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(AgentError::Config(format!("tau {value} outside (0, 1]")));
            }
            config.tau = value;
        }
        "batch_size" => {
            if value < 1.0 {
                return Err(AgentError::Config("batch_size must be at least 1".into()));
            }
            config.batch_size = value.round() as usize;
        }
        _ => return Ok(false),
    }
    Ok(true)
}

pub(crate) fn get_common(config: &AgentConfig, name: &str) -> Option<f64> {
    match name {
        "learning_rate" => Some(config.critic_lr),
        "tau" => Some(config.tau),
        "batch_size" => Some(config.batch_size as f64),
        _ => None,
    }
}
