use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, concat, gaussian, get_common, network, ready, resolve_gamma, set_common,
    uniform_action, Agent, AgentConfig, AgentError, AgentKind, ActionCodec, LossSummary, Normalizer,
    TrainStatus,
};
use crate::mdp::{Action, ActionSpace, EnvSpec, Observation, Transition};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, ReplayBuffer};

/// Actor with a tanh output in `[-1, 1]^d` plus optimizer.
pub(crate) struct DeterministicActor {
    pub(crate) net: Mlp,
    pub(crate) target: Mlp,
    pub(crate) opt: Adam,
    pub(crate) grads: Gradients,
}

/// Scalar Q critic over `(state, action)` plus optimizer.
pub(crate) struct Critic {
    pub(crate) net: Mlp,
    pub(crate) target: Mlp,
    pub(crate) opt: Adam,
    pub(crate) grads: Gradients,
}

fn adam(net: &Mlp, lr: f64, config: &AgentConfig) -> Result<Adam, AgentError> {
    Ok(Adam::new(
        net,
        AdamConfig {
            learning_rate: lr,
            max_grad_norm: config.max_grad_norm,
            ..Default::default()
        },
    )?)
}

impl DeterministicActor {
    pub(crate) fn new(state_dim: usize, dim: usize, config: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<Self, AgentError> {
        let net = network(state_dim, &config.hidden, dim, Activation::Tanh, rng);
        Ok(DeterministicActor {
            opt: adam(&net, config.actor_lr, config)?,
            grads: Gradients::zeros_like(&net),
            target: net.clone(),
            net,
        })
    }
}

impl Critic {
    pub(crate) fn new(input: usize, outputs: usize, config: &AgentConfig, rng: &mut ChaCha8Rng) -> Result<Self, AgentError> {
        let net = network(input, &config.hidden, outputs, Activation::Linear, rng);
        Ok(Critic {
            opt: adam(&net, config.critic_lr, config)?,
            grads: Gradients::zeros_like(&net),
            target: net.clone(),
            net,
        })
    }
}

pub(crate) fn action_space_check(spec: &EnvSpec, who: &str) -> Result<ActionCodec, AgentError> {
    match spec.action_space {
        ActionSpace::Discrete { .. } => Err(AgentError::Config(format!(
            "{who} needs a continuous or hybrid action space"
        ))),
        _ => Ok(ActionCodec::new(spec.action_space.clone())),
    }
}

/// Deterministic action plus exploration: uniform with probability
/// epsilon, else Gaussian noise of scale `noise`, clipped to the box.
pub(crate) fn explore_vector(
    actor: &Mlp,
    state: &[f64],
    explore: bool,
    noise: f64,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AgentError> {
    let mut a = actor.forward(state)?;
    if explore {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(uniform_action(rng, a.len()));
        }
        if noise > 0.0 {
            for x in &mut a {
                *x = (*x + noise * gaussian(rng)).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(a)
}

/// Accumulates the deterministic policy gradient of `-mean Q(s, mu(s))`
/// into the actor's gradient buffer and returns the actor loss.
pub(crate) fn actor_gradient(
    actor: &mut DeterministicActor,
    critic: &Mlp,
    states: &[Vec<f64>],
) -> Result<f64, AgentError> {
    let inv_b = 1.0 / states.len() as f64;
    let sd = actor.net.input_dim();
    actor.grads.fill_zero();
    let mut loss = 0.0;
    for s in states {
        let at = actor.net.forward_trace(s)?;
        let ct = critic.forward_trace(&concat(s, at.output()))?;
        loss -= ct.output()[0] * inv_b;
        let dx = critic.input_gradient(&ct, &[-inv_b])?;
        actor.net.backward_into(&at, &dx[sd..], &mut actor.grads)?;
    }
    Ok(loss)
}

pub struct Ddpg {
    config: AgentConfig,
    gamma: f64,
    codec: ActionCodec,
    norm: Normalizer,
    actor: DeterministicActor,
    critic: Critic,
    rng: ChaCha8Rng,
    critic_updates: u64,
    actor_updates: u64,
}

impl Ddpg {
    pub fn new(config: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let codec = action_space_check(spec, "DDPG")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = codec.dim();
        let actor = DeterministicActor::new(spec.state_dim, d, &config, &mut rng)?;
        let critic = Critic::new(spec.state_dim + d, 1, &config, &mut rng)?;
        Ok(Ddpg {
            gamma: resolve_gamma(&config, spec),
            norm: Normalizer::new(spec),
            codec,
            actor,
            critic,
            rng,
            config,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.net
    }
}

impl Agent for Ddpg {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
    }

    fn select_action(&mut self, observation: &Observation, explore: bool) -> Result<Action, AgentError> {
        let s = self.norm.apply(&observation.values)?;
        let a = explore_vector(
            &self.actor.net,
            &s,
            explore,
            self.config.exploration_noise,
            self.config.epsilon,
            &mut self.rng,
        )?;
        self.codec.decode(&a, observation.mask.as_deref())
    }

    fn train_step(&mut self, buffer: &ReplayBuffer<Transition>) -> Result<TrainStatus, AgentError> {
        if let Some(skip) = ready(buffer, &self.config) {
            return Ok(skip);
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng);
        let inv_b = 1.0 / batch.len() as f64;
        let mut states = Vec::with_capacity(batch.len());
        self.critic.grads.fill_zero();
        let mut critic_loss = 0.0;
        for t in &batch {
            let s = self.norm.apply(&t.state)?;
            let a = self.codec.encode(&t.action)?;
            let mut y = t.reward * self.config.reward_scale;
            if !t.terminal {
                let s2 = self.norm.apply(&t.next_state)?;
                let a2 = self.actor.target.forward(&s2)?;
                y += self.gamma * self.critic.target.forward(&concat(&s2, &a2))?[0];
            }
            let trace = self.critic.net.forward_trace(&concat(&s, &a))?;
            let err = trace.output()[0] - y;
            critic_loss += 0.5 * err * err * inv_b;
            self.critic.net.backward_into(&trace, &[err * inv_b], &mut self.critic.grads)?;
            states.push(s);
        }
        check_finite(AgentKind::Ddpg, "critic loss", critic_loss, self.critic_updates, self.actor_updates, &batch)?;
        self.critic.opt.step(&mut self.critic.net, &self.critic.grads)?;
        self.critic_updates += 1;

        let actor_loss = actor_gradient(&mut self.actor, &self.critic.net, &states)?;
        check_finite(AgentKind::Ddpg, "actor loss", actor_loss, self.critic_updates, self.actor_updates, &batch)?;
        self.actor.opt.step(&mut self.actor.net, &self.actor.grads)?;
        self.actor_updates += 1;

        self.critic.target.polyak_from(&self.critic.net, self.config.tau)?;
        self.actor.target.polyak_from(&self.actor.net, self.config.tau)?;
        Ok(TrainStatus::Trained(LossSummary {
            critic: critic_loss,
            actor: Some(actor_loss),
        }))
    }

    fn exploration(&self) -> f64 {
        self.config.exploration_noise
    }

    fn set_epsilon(&mut self, epsilon: f64) {
        self.config.epsilon = epsilon.clamp(0.0, 1.0);
    }

    fn hyperparameter(&self, name: &str) -> Option<f64> {
        match name {
            "exploration_noise" => Some(self.config.exploration_noise),
            _ => get_common(&self.config, name),
        }
    }

    fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), AgentError> {
        if name == "exploration_noise" {
            if !(value.is_finite() && value >= 0.0) {
                return Err(AgentError::Config("exploration_noise must be >= 0".into()));
            }
            self.config.exploration_noise = value;
            return Ok(());
        }
        if !set_common(&mut self.config, name, value)? {
            return Err(AgentError::UnknownHyperparameter(name.into()));
        }
        self.actor.opt.set_learning_rate(self.config.actor_lr);
        self.critic.opt.set_learning_rate(self.config.critic_lr);
        Ok(())
    }

    fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    fn actor_updates(&self) -> u64 {
        self.actor_updates
    }
}
