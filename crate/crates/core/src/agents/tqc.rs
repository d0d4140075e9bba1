use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ddpg::{action_space_check, Critic};
use super::{
    check_finite, concat, gaussian, get_common, network, ready, resolve_gamma, set_common,
    uniform_action, Agent, AgentConfig, AgentError, AgentKind, ActionCodec, LossSummary, Normalizer,
    TrainStatus,
};
use crate::mdp::{Action, EnvSpec, Observation, Transition};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, ReplayBuffer};

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
/// Keeps `log(1 - tanh^2)` finite at saturation.
const SQUASH_EPS: f64 = 1e-6;
const HUBER_KAPPA: f64 = 1.0;

/// Pools the `N x M` quantiles, sorts them, drops the `k * N` largest and
/// returns the mean of the rest.
pub fn tqc_truncated_target(quantile_sets: &[Vec<f64>], k: usize) -> Result<f64, AgentError> {
    let kept = truncated_atoms(quantile_sets, k)?;
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// The sorted atoms that survive truncation.
fn truncated_atoms(quantile_sets: &[Vec<f64>], k: usize) -> Result<Vec<f64>, AgentError> {
    let n = quantile_sets.len();
    let m = quantile_sets.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(AgentError::Config("need at least one critic with one quantile".into()));
    }
    if quantile_sets.iter().any(|q| q.len() != m) {
        return Err(AgentError::Config("critics disagree on the number of quantiles".into()));
    }
    if k >= m {
        return Err(AgentError::Config(format!(
            "dropping {} of {} pooled quantiles leaves nothing",
            k * n,
            n * m
        )));
    }
    let mut pooled: Vec<f64> = quantile_sets.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.truncate(n * m - k * n);
    Ok(pooled)
}

/// Quantile Huber loss `|tau - 1{u < 0}| * huber_kappa(u) / kappa` for the
/// residual `u = target - prediction`, with its derivative in `u`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> (f64, f64) {
    let weight = (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs();
    let (h, dh) = if u.abs() <= kappa {
        (0.5 * u * u, u)
    } else {
        (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
    };
    (weight * h / kappa, weight * dh / kappa)
}

/// A reparameterized draw `a = tanh(mu + sigma * xi)` with its log-density
/// and the log-density's partial derivatives in `mu` and `log_sigma`
/// (holding `xi` fixed).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SquashedDraw {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub dlogp_dmu: Vec<f64>,
    pub dlogp_dlog_std: Vec<f64>,
    /// `da/dmu`, i.e. `1 - a^2`.
    pub da_du: Vec<f64>,
    pub sigma: Vec<f64>,
    pub log_std_clamped: Vec<bool>,
}

pub(crate) fn squashed_gaussian(head: &[f64], xi: &[f64]) -> SquashedDraw {
    let d = xi.len();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut draw = SquashedDraw {
        action: Vec::with_capacity(d),
        log_prob: 0.0,
        dlogp_dmu: Vec::with_capacity(d),
        dlogp_dlog_std: Vec::with_capacity(d),
        da_du: Vec::with_capacity(d),
        sigma: Vec::with_capacity(d),
        log_std_clamped: Vec::with_capacity(d),
    };
    for j in 0..d {
        let mu = head[j];
        let raw = head[d + j];
        let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let sigma = ls.exp();
        let a = (mu + sigma * xi[j]).tanh();
        let one_minus = 1.0 - a * a;
        let g = 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
        draw.log_prob += -0.5 * xi[j] * xi[j] - half_log_2pi - ls - (one_minus + SQUASH_EPS).ln();
        draw.dlogp_dmu.push(g);
        draw.dlogp_dlog_std.push(-1.0 + g * sigma * xi[j]);
        draw.da_du.push(one_minus);
        draw.sigma.push(sigma);
        draw.log_std_clamped.push(raw != ls);
        draw.action.push(a);
    }
    draw
}

/// Truncated quantile critics with a tanh-Gaussian actor and a fixed
/// entropy temperature.
pub struct Tqc {
    config: AgentConfig,
    gamma: f64,
    codec: ActionCodec,
    norm: Normalizer,
    actor: Mlp,
    actor_opt: Adam,
    actor_grads: Gradients,
    critics: Vec<Critic>,
    taus: Vec<f64>,
    rng: ChaCha8Rng,
    critic_updates: u64,
    actor_updates: u64,
}

impl Tqc {
    pub fn new(config: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let codec = action_space_check(spec, "TQC")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = codec.dim();
        let m = config.n_quantiles;
        let actor = network(spec.state_dim, &config.hidden, 2 * d, Activation::Linear, &mut rng);
        let critics = (0..config.n_critics)
            .map(|_| Critic::new(spec.state_dim + d, m, &config, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let actor_opt = Adam::new(
            &actor,
            AdamConfig {
                learning_rate: config.actor_lr,
                max_grad_norm: config.max_grad_norm,
                ..Default::default()
            },
        )?;
        Ok(Tqc {
            gamma: resolve_gamma(&config, spec),
            norm: Normalizer::new(spec),
            taus: (0..m).map(|i| (2 * i + 1) as f64 / (2 * m) as f64).collect(),
            actor_grads: Gradients::zeros_like(&actor),
            codec,
            actor,
            actor_opt,
            critics,
            rng,
            config,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    fn draw_noise(&mut self) -> Vec<f64> {
        (0..self.codec.dim()).map(|_| gaussian(&mut self.rng)).collect()
    }

    /// Mean of every critic's quantiles and its gradient in the action.
    fn mean_q_and_action_grad(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>), AgentError> {
        let x = concat(s, a);
        let n = self.critics.len() as f64;
        let m = self.config.n_quantiles as f64;
        let out_grad = vec![1.0 / (n * m); self.config.n_quantiles];
        let mut q = 0.0;
        let mut da = vec![0.0; a.len()];
        for c in &self.critics {
            let trace = c.net.forward_trace(&x)?;
            q += trace.output().iter().sum::<f64>() / (n * m);
            let dx = c.net.input_gradient(&trace, &out_grad)?;
            da.iter_mut().zip(&dx[s.len()..]).for_each(|(g, v)| *g += v);
        }
        Ok((q, da))
    }

    /// Actor loss `mean(alpha * log pi - mean Q)` over `states` for the
    /// given noise draws; the gradient is accumulated into `actor_grads`.
    pub(crate) fn actor_objective(&mut self, states: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<f64, AgentError> {
        let inv_b = 1.0 / states.len() as f64;
        let alpha = self.config.entropy_alpha;
        let d = self.codec.dim();
        self.actor_grads.fill_zero();
        let mut loss = 0.0;
        for (s, xi) in states.iter().zip(noise) {
            let trace = self.actor.forward_trace(s)?;
            let draw = squashed_gaussian(trace.output(), xi);
            let (q, dq_da) = self.mean_q_and_action_grad(s, &draw.action)?;
            loss += (alpha * draw.log_prob - q) * inv_b;
            let mut head_grad = vec![0.0; 2 * d];
            for j in 0..d {
                let dq_du = dq_da[j] * draw.da_du[j];
                head_grad[j] = (alpha * draw.dlogp_dmu[j] - dq_du) * inv_b;
                head_grad[d + j] = if draw.log_std_clamped[j] {
                    0.0
                } else {
                    (alpha * draw.dlogp_dlog_std[j] - dq_du * draw.sigma[j] * xi[j]) * inv_b
                };
            }
            self.actor.backward_into(&trace, &head_grad, &mut self.actor_grads)?;
        }
        Ok(loss)
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }
}

impl Agent for Tqc {
    fn kind(&self) -> AgentKind {
        AgentKind::Tqc
    }

    fn select_action(&mut self, observation: &Observation, explore: bool) -> Result<Action, AgentError> {
        let s = self.norm.apply(&observation.values)?;
        let head = self.actor.forward(&s)?;
        let d = self.codec.dim();
        let a = if !explore {
            head[..d].iter().map(|m| m.tanh()).collect()
        } else if self.config.epsilon > 0.0 && self.rng.random::<f64>() < self.config.epsilon {
            uniform_action(&mut self.rng, d)
        } else {
            let xi = self.draw_noise();
            squashed_gaussian(&head, &xi).action
        };
        self.codec.decode(&a, observation.mask.as_deref())
    }

    fn train_step(&mut self, buffer: &ReplayBuffer<Transition>) -> Result<TrainStatus, AgentError> {
        if let Some(skip) = ready(buffer, &self.config) {
            return Ok(skip);
        }
        let batch = buffer.sample(self.config.batch_size, &mut self.rng);
        let inv_b = 1.0 / batch.len() as f64;
        let alpha = self.config.entropy_alpha;
        let k = self.config.k_drop_per_critic;
        let m = self.config.n_quantiles;
        for c in &mut self.critics {
            c.grads.fill_zero();
        }
        let mut critic_loss = 0.0;
        let mut states = Vec::with_capacity(batch.len());
        for t in &batch {
            let s = self.norm.apply(&t.state)?;
            let a = self.codec.encode(&t.action)?;
            let r = t.reward * self.config.reward_scale;
            let atoms: Vec<f64> = if t.terminal {
                vec![r]
            } else {
                let s2 = self.norm.apply(&t.next_state)?;
                let xi = self.draw_noise();
                let draw = squashed_gaussian(&self.actor.forward(&s2)?, &xi);
                let x2 = concat(&s2, &draw.action);
                let sets = self
                    .critics
                    .iter()
                    .map(|c| c.target.forward(&x2))
                    .collect::<Result<Vec<_>, _>>()?;
                truncated_atoms(&sets, k)?
                    .into_iter()
                    .map(|z| r + self.gamma * (z - alpha * draw.log_prob))
                    .collect()
            };
            let inv_atoms = 1.0 / (atoms.len() * m) as f64;
            let x = concat(&s, &a);
            for c in &mut self.critics {
                let trace = c.net.forward_trace(&x)?;
                let mut grad = vec![0.0; m];
                for (i, (&theta, &tau)) in trace.output().iter().zip(&self.taus).enumerate() {
                    for &z in &atoms {
                        let (l, dl_du) = quantile_huber(z - theta, tau, HUBER_KAPPA);
                        critic_loss += l * inv_atoms * inv_b;
                        grad[i] -= dl_du * inv_atoms * inv_b;
                    }
                }
                c.net.backward_into(&trace, &grad, &mut c.grads)?;
            }
            states.push(s);
        }
        critic_loss /= self.critics.len() as f64;
        check_finite(AgentKind::Tqc, "critic loss", critic_loss, self.critic_updates, self.actor_updates, &batch)?;
        for c in &mut self.critics {
            c.opt.step(&mut c.net, &c.grads)?;
        }
        self.critic_updates += 1;

        let noise: Vec<Vec<f64>> = (0..states.len()).map(|_| self.draw_noise()).collect();
        let actor_loss = self.actor_objective(&states, &noise)?;
        check_finite(AgentKind::Tqc, "actor loss", actor_loss, self.critic_updates, self.actor_updates, &batch)?;
        self.actor_opt.step(&mut self.actor, &self.actor_grads)?;
        self.actor_updates += 1;
        for c in &mut self.critics {
            c.target.polyak_from(&c.net, self.config.tau)?;
        }
        Ok(TrainStatus::Trained(LossSummary {
            critic: critic_loss,
            actor: Some(actor_loss),
        }))
    }

    fn exploration(&self) -> f64 {
        self.config.entropy_alpha
    }

    fn set_epsilon(&mut self, epsilon: f64) {
        self.config.epsilon = epsilon.clamp(0.0, 1.0);
    }

    fn hyperparameter(&self, name: &str) -> Option<f64> {
        match name {
            "entropy_alpha" => Some(self.config.entropy_alpha),
            "truncation_k" => Some(self.config.k_drop_per_critic as f64),
            _ => get_common(&self.config, name),
        }
    }

    fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), AgentError> {
        match name {
            "entropy_alpha" => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(AgentError::Config("entropy_alpha must be >= 0".into()));
                }
                self.config.entropy_alpha = value;
                return Ok(());
            }
            "truncation_k" => {
                let k = value.round();
                if !(k >= 0.0 && (k as usize) < self.config.n_quantiles) {
                    return Err(AgentError::Config(format!(
                        "truncation_k {value} must lie in [0, {})",
                        self.config.n_quantiles
                    )));
                }
                self.config.k_drop_per_critic = k as usize;
                return Ok(());
            }
            _ => {}
        }
        if !set_common(&mut self.config, name, value)? {
            return Err(AgentError::UnknownHyperparameter(name.into()));
        }
        self.actor_opt.set_learning_rate(self.config.actor_lr);
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
