use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, get_common, masked_argmax, network, ready, resolve_gamma, set_common, Agent,
    AgentConfig, AgentError, AgentKind, LossSummary, Normalizer, TrainStatus,
};
use crate::mdp::{Action, ActionSpace, EnvSpec, Observation, Transition};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, ReplayBuffer};

/// Deep Q-network with a Polyak-averaged target and epsilon-greedy
/// exploration over feasible actions.
pub struct Dqn {
    config: AgentConfig,
    gamma: f64,
    actions: usize,
    norm: Normalizer,
    q: Mlp,
    target: Mlp,
    opt: Adam,
    grads: Gradients,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Dqn {
    pub fn new(config: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let ActionSpace::Discrete { n } = spec.action_space else {
            return Err(AgentError::Config("DQN needs a discrete action space".into()));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = network(spec.state_dim, &config.hidden, n, Activation::Linear, &mut rng);
        let opt = Adam::new(
            &q,
            AdamConfig {
                learning_rate: config.critic_lr,
                max_grad_norm: config.max_grad_norm,
                ..Default::default()
            },
        )?;
        Ok(Dqn {
            gamma: resolve_gamma(&config, spec),
            actions: n,
            norm: Normalizer::new(spec),
            target: q.clone(),
            grads: Gradients::zeros_like(&q),
            q,
            opt,
            rng,
            config,
            updates: 0,
        })
    }

    /// Online Q-values for a raw observation.
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.q.forward(&self.norm.apply(state)?)?)
    }

    pub fn q_network(&self) -> &Mlp {
        &self.q
    }
}

impl Agent for Dqn {
    fn kind(&self) -> AgentKind {
        AgentKind::Dqn
    }

    fn select_action(&mut self, observation: &Observation, explore: bool) -> Result<Action, AgentError> {
        let mask = observation.mask.as_deref();
        if let Some(m) = mask {
            if m.len() != self.actions {
                return Err(AgentError::Shape {
                    expected: self.actions,
                    found: m.len(),
                });
            }
        }
        let q = self.q_values(&observation.values)?;
        if explore && self.config.epsilon > 0.0 && self.rng.random::<f64>() < self.config.epsilon {
            let feasible: Vec<usize> = (0..self.actions).filter(|&i| mask.is_none_or(|m| m[i])).collect();
            if feasible.is_empty() {
                return Err(AgentError::Infeasible);
            }
            return Ok(Action::Discrete(feasible[self.rng.random_range(0..feasible.len())]));
        }
        Ok(Action::Discrete(masked_argmax(&q, mask)?))
    }

    fn train_step(&mut self, buffer: &ReplayBuffer<Transition>) -> Result<TrainStatus, AgentError> {
        if let Some(skip) = ready(buffer, &self.config) {
            return Ok(skip);
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng);
        let inv_b = 1.0 / batch.len() as f64;
        self.grads.fill_zero();
        let mut loss = 0.0;
        for t in &batch {
            let Action::Discrete(a) = t.action else {
                return Err(AgentError::Action("DQN replay holds a non-discrete action".into()));
            };
            if a >= self.actions {
                return Err(AgentError::Action(format!("action {a} out of range")));
            }
            let mut y = t.reward * self.config.reward_scale;
            if !t.terminal {
                let next = self.target.forward(&self.norm.apply(&t.next_state)?)?;
                let best = masked_argmax(&next, t.next_mask.as_deref())?;
                y += self.gamma * next[best];
            }
            let trace = self.q.forward_trace(&self.norm.apply(&t.state)?)?;
            let err = trace.output()[a] - y;
            loss += 0.5 * err * err * inv_b;
            let mut g = vec![0.0; self.actions];
            g[a] = err * inv_b;
            self.q.backward_into(&trace, &g, &mut self.grads)?;
        }
        check_finite(AgentKind::Dqn, "td loss", loss, self.updates, 0, &batch)?;
        self.opt.step(&mut self.q, &self.grads)?;
        self.target.polyak_from(&self.q, self.config.tau)?;
        self.updates += 1;
        Ok(TrainStatus::Trained(LossSummary {
            critic: loss,
            actor: None,
        }))
    }

    fn exploration(&self) -> f64 {
        self.config.epsilon
    }

    fn set_epsilon(&mut self, epsilon: f64) {
        self.config.epsilon = epsilon.clamp(0.0, 1.0);
    }

    fn hyperparameter(&self, name: &str) -> Option<f64> {
        get_common(&self.config, name)
    }

    fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), AgentError> {
        if !set_common(&mut self.config, name, value)? {
            return Err(AgentError::UnknownHyperparameter(name.into()));
        }
        self.opt.set_learning_rate(self.config.critic_lr);
        Ok(())
    }

    fn critic_updates(&self) -> u64 {
        self.updates
    }

    fn actor_updates(&self) -> u64 {
        0
    }
}
