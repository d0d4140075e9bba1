use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RoleError;
use crate::agents::{AgentConfig, AgentKind};

/// How far a single intervention may move a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "step", rename_all = "lowercase")]
pub enum RateLimit {
    /// New value within `[current / f, current * f]`.
    Multiplicative(f64),
    /// New value within `[current - s, current + s]`.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparam {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub limit: RateLimit,
    /// Rounded to the nearest integer after clamping.
    #[serde(default)]
    pub integer: bool,
}

impl Hyperparam {
    pub fn new(name: &str, value: f64, lo: f64, hi: f64, limit: RateLimit) -> Self {
        Hyperparam {
            name: name.into(),
            value,
            lo,
            hi,
            limit,
            integer: false,
        }
    }

    pub fn integer(mut self) -> Self {
        self.integer = true;
        self
    }

    /// Interval reachable from `current` in one intervention, intersected
    /// with the certified range.
    pub fn reachable(&self, current: f64) -> (f64, f64) {
        let (a, b) = match self.limit {
            RateLimit::Multiplicative(f) => (current / f, current * f),
            RateLimit::Absolute(s) => (current - s, current + s),
        };
        (a.max(self.lo), b.min(self.hi))
    }

    /// Clamps `proposed` into the certified range, then into the rate
    /// limit around the current value. Returns `(clamped, applied)`.
    pub fn constrain(&self, proposed: f64) -> (f64, f64) {
        let clamped = proposed.clamp(self.lo, self.hi);
        let (a, b) = self.reachable(self.value);
        let mut applied = clamped.clamp(a, b);
        if self.integer {
            applied = applied.round().clamp(a.ceil(), b.floor());
        }
        (clamped, applied)
    }

    /// True when `value` is inside the certified range and one legal
    /// step from `previous`.
    pub fn admissible(&self, previous: f64, value: f64) -> bool {
        let (a, b) = self.reachable(previous);
        let tol = 1e-12 * value.abs().max(1.0);
        value >= self.lo && value <= self.hi && value >= a - tol && value <= b + tol
    }
}

/// The whitelist of adjustable hyperparameters with certified ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSet {
    entries: Vec<Hyperparam>,
}

impl HyperparamSet {
    pub fn new(mut entries: Vec<Hyperparam>) -> Result<Self, RoleError> {
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        for w in entries.windows(2) {
            if w[0].name == w[1].name {
                return Err(RoleError::Config(format!("hyperparameter '{}' listed twice", w[0].name)));
            }
        }
        for e in &entries {
            if !(e.lo <= e.hi && e.value >= e.lo && e.value <= e.hi && e.value.is_finite()) {
                return Err(RoleError::Config(format!(
                    "{} = {} outside its certified range [{}, {}]",
                    e.name, e.value, e.lo, e.hi
                )));
            }
            match e.limit {
                RateLimit::Multiplicative(f) if !(f > 1.0 && e.lo > 0.0) => {
                    return Err(RoleError::Config(format!(
                        "{}: multiplicative limits need a factor above 1 and a positive range",
                        e.name
                    )))
                }
                RateLimit::Absolute(s) if !(s > 0.0) => {
                    return Err(RoleError::Config(format!("{}: absolute step must be positive", e.name)))
                }
                _ => {}
            }
        }
        Ok(HyperparamSet { entries })
    }

    /// Default whitelist for an agent, seeded from its configuration.
    /// `exploration_decay` is included when a decay schedule is in use.
    pub fn standard(kind: AgentKind, config: &AgentConfig, exploration_decay: Option<f64>) -> Result<Self, RoleError> {
        let x2 = RateLimit::Multiplicative(2.0);
        let mut entries = vec![
            Hyperparam::new("learning_rate", config.critic_lr, 1e-5, 1e-2, x2),
            Hyperparam::new("tau", config.tau, 1e-4, 0.1, x2),
            Hyperparam::new("batch_size", config.batch_size as f64, 16.0, 512.0, RateLimit::Absolute(64.0)).integer(),
        ];
        if kind == AgentKind::Tqc {
            entries.push(Hyperparam::new("entropy_alpha", config.entropy_alpha, 1e-4, 1.0, x2));
            entries.push(
                Hyperparam::new(
                    "truncation_k",
                    config.k_drop_per_critic as f64,
                    0.0,
                    (config.n_quantiles - 1) as f64,
                    RateLimit::Absolute(1.0),
                )
                .integer(),
            );
        }
        if let Some(d) = exploration_decay {
            entries.push(Hyperparam::new("exploration_decay", d, 0.1, 1.0, x2));
        }
        for e in &mut entries {
            e.lo = e.lo.min(e.value);
            e.hi = e.hi.max(e.value);
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[Hyperparam] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Hyperparam> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets a value that was already constrained. Values outside the
    /// certified range are refused.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), RoleError> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| RoleError::Config(format!("'{name}' is not whitelisted")))?;
        if !(value >= e.lo && value <= e.hi) {
            return Err(RoleError::Config(format!(
                "{name} = {value} outside [{}, {}]",
                e.lo, e.hi
            )));
        }
        e.value = value;
        Ok(())
    }

    /// Short digest of the current values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update([0u8]);
            h.update(e.value.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// One line per entry: `name = value (range [lo, hi])`.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} = {} (range [{}, {}])", e.name, e.value, e.lo, e.hi))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
