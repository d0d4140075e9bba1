use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ddpg::{action_space_check, actor_gradient, explore_vector, Critic, DeterministicActor};
use super::{
    check_finite, concat, gaussian, get_common, ready, resolve_gamma, set_common, Agent, AgentConfig,
    AgentError, AgentKind, ActionCodec, LossSummary, Normalizer, TrainStatus,
};
use crate::mdp::{Action, EnvSpec, Observation, Transition};
use crate::nn::{Mlp, ReplayBuffer};

/// Twin critics with a clipped double-Q target, target policy smoothing and
/// delayed actor and target updates.
pub struct Td3 {
    config: AgentConfig,
    gamma: f64,
    codec: ActionCodec,
    norm: Normalizer,
    actor: DeterministicActor,
    critics: [Critic; 2],
    rng: ChaCha8Rng,
    critic_updates: u64,
    actor_updates: u64,
}

impl Td3 {
    pub fn new(config: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let codec = action_space_check(spec, "TD3")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = codec.dim();
        let actor = DeterministicActor::new(spec.state_dim, d, &config, &mut rng)?;
        let critics = [
            Critic::new(spec.state_dim + d, 1, &config, &mut rng)?,
            Critic::new(spec.state_dim + d, 1, &config, &mut rng)?,
        ];
        Ok(Td3 {
            gamma: resolve_gamma(&config, spec),
            norm: Normalizer::new(spec),
            codec,
            actor,
            critics,
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

impl Agent for Td3 {
    fn kind(&self) -> AgentKind {
        AgentKind::Td3
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
        let (sigma, clip) = (self.config.target_noise, self.config.target_noise_clip);
        let mut states = Vec::with_capacity(batch.len());
        for c in &mut self.critics {
            c.grads.fill_zero();
        }
        let mut critic_loss = 0.0;
        for t in &batch {
            let s = self.norm.apply(&t.state)?;
            let a = self.codec.encode(&t.action)?;
            let mut y = t.reward * self.config.reward_scale;
            if !t.terminal {
                let s2 = self.norm.apply(&t.next_state)?;
                let mut a2 = self.actor.target.forward(&s2)?;
                for x in &mut a2 {
                    let eps = (sigma * gaussian(&mut self.rng)).clamp(-clip, clip);
                    *x = (*x + eps).clamp(-1.0, 1.0);
                }
                let x2 = concat(&s2, &a2);
                let q1 = self.critics[0].target.forward(&x2)?[0];
                let q2 = self.critics[1].target.forward(&x2)?[0];
                y += self.gamma * q1.min(q2);
            }
            let x = concat(&s, &a);
            for c in &mut self.critics {
                let trace = c.net.forward_trace(&x)?;
                let err = trace.output()[0] - y;
                critic_loss += 0.5 * err * err * inv_b;
                c.net.backward_into(&trace, &[err * inv_b], &mut c.grads)?;
            }
            states.push(s);
        }
        critic_loss *= 0.5;
        check_finite(AgentKind::Td3, "critic loss", critic_loss, self.critic_updates, self.actor_updates, &batch)?;
        for c in &mut self.critics {
            c.opt.step(&mut c.net, &c.grads)?;
        }
        self.critic_updates += 1;

        let mut actor_loss = None;
        if self.critic_updates.is_multiple_of(self.config.policy_delay as u64) {
            let loss = actor_gradient(&mut self.actor, &self.critics[0].net, &states)?;
            check_finite(AgentKind::Td3, "actor loss", loss, self.critic_updates, self.actor_updates, &batch)?;
            self.actor.opt.step(&mut self.actor.net, &self.actor.grads)?;
            self.actor_updates += 1;
            for c in &mut self.critics {
                c.target.polyak_from(&c.net, self.config.tau)?;
            }
            self.actor.target.polyak_from(&self.actor.net, self.config.tau)?;
            actor_loss = Some(loss);
        }
        Ok(TrainStatus::Trained(LossSummary {
            critic: critic_loss,
            actor: actor_loss,
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
            "policy_delay" => Some(self.config.policy_delay as f64),
            _ => get_common(&self.config, name),
        }
    }

    fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), AgentError> {
        match name {
            "exploration_noise" => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(AgentError::Config("exploration_noise must be >= 0".into()));
                }
                self.config.exploration_noise = value;
                return Ok(());
            }
            "policy_delay" => {
                if !(value.is_finite() && value >= 1.0) {
                    return Err(AgentError::Config("policy_delay must be >= 1".into()));
                }
                self.config.policy_delay = value.round() as usize;
                return Ok(());
            }
            _ => {}
        }
        if !set_common(&mut self.config, name, value)? {
            return Err(AgentError::UnknownHyperparameter(name.into()));
        }
        self.actor.opt.set_learning_rate(self.config.actor_lr);
        for c in &mut self.critics {
            c.opt.set_learning_rate(self.config.critic_lr);
        }
        Ok(())
    }

    fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    fn actor_updates(&self) -> u64 {
        self.actor_updates
    }
}
