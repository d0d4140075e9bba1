//! Five-state chain with terminal ends. The left end pays a small reward,
//! the right end a larger one; from the middle the larger reward is worth the
//! longer walk, so the optimal policy always moves right.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Action, ActionSpace, EnvError, EnvSpec, Environment, Observation, StepOutcome};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone)]
pub struct ChainEnv {
    spec: EnvSpec,
    states: usize,
    left_reward: f64,
    right_reward: f64,
    state: usize,
    steps: usize,
    done: bool,
    started: bool,
}

impl Default for ChainEnv {
    fn default() -> Self {
        ChainEnv::new(5, 0.5, 1.0, 0.9, 20)
    }
}

impl ChainEnv {
    pub fn new(states: usize, left_reward: f64, right_reward: f64, gamma: f64, max_steps: usize) -> Self {
        assert!(states >= 3, "chain needs at least one interior state");
        let features = (0..states).map(|i| (format!("s{i}"), 1.0)).collect();
        let spec = EnvSpec::new("chain", ActionSpace::Discrete { n: 2 }, gamma, max_steps, features)
            .expect("valid chain spec");
        ChainEnv {
            spec,
            states,
            left_reward,
            right_reward,
            state: states / 2,
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.states];
        v[s] = 1.0;
        v
    }

    /// Deterministic model: `(next_state, reward, terminal)`.
    pub fn transition(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let next = if a == LEFT { s - 1 } else { s + 1 };
        if next == 0 {
            (next, self.left_reward, true)
        } else if next == self.states - 1 {
            (next, self.right_reward, true)
        } else {
            (next, 0.0, false)
        }
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == 0 || s == self.states - 1
    }
}

impl Environment for ChainEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Starts in an interior state drawn from `seed`.
    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = rng.random_range(1..self.states - 1);
        self.steps = 0;
        self.done = false;
        self.started = true;
        Observation::new(self.one_hot(self.state))
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            other => return Err(EnvError::InvalidAction(format!("{other:?} for a 2-action chain"))),
        };
        let (next, reward, terminal) = self.transition(self.state, a);
        self.state = next;
        self.steps += 1;
        self.done = terminal || self.steps >= self.spec.max_steps;
        Ok(StepOutcome {
            observation: Observation::new(self.one_hot(next)),
            reward,
            done: self.done,
            terminal,
            telemetry: BTreeMap::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walking_right_reaches_big_reward() {
        let mut env = ChainEnv::default();
        env.reset(0);
        let mut last = None;
        for _ in 0..4 {
            let out = env.step(&Action::Discrete(RIGHT)).unwrap();
            let done = out.done;
            last = Some(out);
            if done {
                break;
            }
        }
        let last = last.unwrap();
        assert!(last.terminal);
        assert_eq!(last.reward, 1.0);
        assert_eq!(env.step(&Action::Discrete(RIGHT)), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn rejects_bad_actions_and_unreset_use() {
        let mut env = ChainEnv::default();
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::NotReset));
        env.reset(1);
        assert!(matches!(env.step(&Action::Discrete(2)), Err(EnvError::InvalidAction(_))));
    }

    #[test]
    fn horizon_ends_episode() {
        let mut env = ChainEnv::new(5, 0.5, 1.0, 0.9, 2);
        env.reset(0);
        let mut outs = Vec::new();
        for a in [LEFT, RIGHT] {
            outs.push(env.step(&Action::Discrete(a)).unwrap());
            if outs.last().unwrap().done {
                break;
            }
        }
        let last = outs.last().unwrap();
        assert!(last.done);
    }
}
