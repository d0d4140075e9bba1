//! Space-air-ground downlink: each slot one visible LEO satellite feeds the
//! HAP over free-space optics, and the HAP splits its RF subcarriers across
//! ground clusters. Delivered traffic is the bottleneck of the two hops;
//! switching satellites costs a fixed handover penalty.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mdp::{Action, ActionSpace, EnvError, EnvSpec, Environment, Observation, StepOutcome};

/// `eps(e) = max(eps0 * (1 - e / (e_decay * E)), 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub epsilon0: f64,
    pub total_episodes: usize,
    pub decay: f64,
}

impl ExplorationSchedule {
    pub fn new(epsilon0: f64, total_episodes: usize, decay: f64) -> Result<Self, EnvError> {
        if !(epsilon0 >= 0.0 && epsilon0.is_finite()) {
            return Err(EnvError::Config(format!("epsilon0 must be >= 0, got {epsilon0}")));
        }
        if total_episodes == 0 {
            return Err(EnvError::Config("episode budget must be positive".into()));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(EnvError::Config(format!("decay must lie in (0, 1], got {decay}")));
        }
        Ok(ExplorationSchedule {
            epsilon0,
            total_episodes,
            decay,
        })
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let e = episode as f64;
        (self.epsilon0 * (1.0 - e / (self.decay * self.total_episodes as f64))).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaginScenario {
    pub satellites: usize,
    pub clusters: usize,
    pub subcarriers: usize,
    /// Bandwidth per subcarrier (normalized units).
    pub bandwidth: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    /// Orbital period in slots for the elevation proxy.
    pub period: usize,
    pub visibility_threshold: f64,
    /// FSO capacity at zenith; scales with the elevation proxy.
    pub fso_peak: f64,
    /// Explicit cyclic visibility schedule (`rows[slot][satellite]`). When
    /// present, visible satellites offer `fso_peak`.
    pub schedule: Option<Vec<Vec<bool>>>,
    pub gain_init: [f64; 2],
    /// Standard deviation of the per-slot log-gain random walk (HAP drift).
    pub gain_drift: f64,
    pub gain_clip: [f64; 2],
    pub handover_penalty: f64,
    pub throughput_scale: f64,
    pub horizon: usize,
    pub gamma: f64,
    /// Sharpness of the agent-side allocation softmax.
    pub allocation_logit_scale: f64,
    /// Draw the orbital phase from the reset seed.
    pub random_phase: bool,
}

impl Default for SaginScenario {
    fn default() -> Self {
        SaginScenario {
            satellites: 6,
            clusters: 4,
            subcarriers: 16,
            bandwidth: 1.0,
            tx_power: 1.0,
            noise_power: 1.0,
            period: 60,
            visibility_threshold: 0.5,
            fso_peak: 40.0,
            schedule: None,
            gain_init: [0.5, 5.0],
            gain_drift: 0.1,
            gain_clip: [0.1, 10.0],
            handover_penalty: 0.1,
            throughput_scale: 40.0,
            horizon: 100,
            gamma: 0.99,
            allocation_logit_scale: 3.0,
            random_phase: true,
        }
    }
}

/// RF throughput `sum_c f_c * N_sc * B * log2(1 + p g_c / sigma^2)`.
pub fn rf_throughput(
    fractions: &[f64],
    gains: &[f64],
    subcarriers: usize,
    bandwidth: f64,
    tx_power: f64,
    noise_power: f64,
) -> f64 {
    fractions
        .iter()
        .zip(gains)
        .map(|(f, g)| f * subcarriers as f64 * bandwidth * (1.0 + tx_power * g / noise_power).log2())
        .sum()
}

/// Traffic delivered end to end is capped by the weaker hop.
pub fn delivered(fso_capacity: f64, rf: f64) -> f64 {
    fso_capacity.min(rf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaginWorld {
    pub slot: usize,
    pub phase: usize,
    pub gains: Vec<f64>,
    pub previous: Option<usize>,
}

pub struct SaginEnv {
    scenario: SaginScenario,
    spec: EnvSpec,
    /// One row per slot of the (cyclic) schedule: capacity, zero if hidden.
    capacity: Vec<Vec<f64>>,
    world: SaginWorld,
    rng: ChaCha8Rng,
    done: bool,
    started: bool,
}

impl SaginEnv {
    pub fn new(scenario: SaginScenario) -> Result<Self, EnvError> {
        let s = &scenario;
        if s.satellites == 0 || s.clusters == 0 || s.subcarriers == 0 {
            return Err(EnvError::Config("need satellites, clusters and subcarriers".into()));
        }
        if !(s.gain_clip[0] > 0.0 && s.gain_clip[0] <= s.gain_clip[1]) {
            return Err(EnvError::Config("gain clip range must be positive and ordered".into()));
        }
        if !(s.gain_init[0] > 0.0 && s.gain_init[0] < s.gain_init[1]) {
            return Err(EnvError::Config("gain init range must be positive and ordered".into()));
        }
        if !(s.throughput_scale > 0.0 && s.noise_power > 0.0) {
            return Err(EnvError::Config("throughput scale and noise must be positive".into()));
        }
        let capacity: Vec<Vec<f64>> = match &s.schedule {
            Some(rows) => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != s.satellites) {
                    return Err(EnvError::Config(format!(
                        "schedule rows must each list {} satellites",
                        s.satellites
                    )));
                }
                rows.iter()
                    .map(|r| r.iter().map(|&v| if v { s.fso_peak } else { 0.0 }).collect())
                    .collect()
            }
            None => {
                if s.period == 0 {
                    return Err(EnvError::Config("period must be positive".into()));
                }
                (0..s.period)
                    .map(|t| {
                        (0..s.satellites)
                            .map(|k| {
                                let angle = std::f64::consts::TAU
                                    * (t as f64 / s.period as f64 + k as f64 / s.satellites as f64);
                                let elevation = angle.sin();
                                if elevation > s.visibility_threshold {
                                    s.fso_peak * elevation
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        if let Some(t) = capacity.iter().position(|row| row.iter().all(|&c| c <= 0.0)) {
            return Err(EnvError::Config(format!(
                "no satellite visible at schedule slot {t}"
            )));
        }

        let k = s.satellites;
        let mut features = Vec::new();
        features.extend((0..k).map(|i| (format!("visible_{i}"), 1.0)));
        features.extend((0..k).map(|i| (format!("fso_{i}"), s.fso_peak.max(1e-9))));
        features.extend((0..s.clusters).map(|c| (format!("gain_{c}"), s.gain_clip[1] / 2.0)));
        features.extend((0..k).map(|i| (format!("previous_{i}"), 1.0)));
        features.push(("progress".into(), 1.0));
        let spec = EnvSpec::new(
            "sagin",
            ActionSpace::Hybrid {
                choices: k,
                parts: s.clusters,
                logit_scale: s.allocation_logit_scale,
            },
            s.gamma,
            s.horizon,
            features,
        )?;
        let world = SaginWorld {
            slot: 0,
            phase: 0,
            gains: vec![1.0; s.clusters],
            previous: None,
        };
        Ok(SaginEnv {
            scenario,
            spec,
            capacity,
            world,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
            started: false,
        })
    }

    pub fn scenario(&self) -> &SaginScenario {
        &self.scenario
    }

    pub fn world(&self) -> &SaginWorld {
        &self.world
    }

    fn row(&self, slot: usize) -> &[f64] {
        &self.capacity[(slot + self.world.phase) % self.capacity.len()]
    }

    /// Entry `k` is true iff satellite `k` is visible at `slot` of the
    /// current episode.
    pub fn visibility_mask(&self, slot: usize) -> Vec<bool> {
        self.row(slot).iter().map(|&c| c > 0.0).collect()
    }

    pub fn fso_capacity(&self, slot: usize, satellite: usize) -> f64 {
        self.row(slot)[satellite]
    }

    fn observe(&self) -> Observation {
        let s = &self.scenario;
        let t = self.world.slot;
        let row = self.row(t);
        let mut v: Vec<f64> = row.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect();
        v.extend(row);
        v.extend(&self.world.gains);
        v.extend((0..s.satellites).map(|k| if self.world.previous == Some(k) { 1.0 } else { 0.0 }));
        v.push(t as f64 / s.horizon as f64);
        Observation {
            values: v,
            mask: Some(self.visibility_mask(t)),
        }
    }
}

impl Environment for SaginEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let s = &self.scenario;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.world.phase = if s.random_phase {
            self.rng.random_range(0..self.capacity.len())
        } else {
            0
        };
        let [lo, hi] = s.gain_init;
        self.world.gains = (0..s.clusters).map(|_| self.rng.random_range(lo..hi)).collect();
        self.world.slot = 0;
        self.world.previous = None;
        self.done = false;
        self.started = true;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let s = &self.scenario;
        let (choice, fractions) = match action {
            Action::Hybrid {
                choice, fractions, ..
            } => (*choice, fractions),
            other => {
                return Err(EnvError::InvalidAction(format!(
                    "expected a satellite choice with allocation, got {other:?}"
                )))
            }
        };
        if choice >= s.satellites {
            return Err(EnvError::InvalidAction(format!("satellite {choice} does not exist")));
        }
        let t = self.world.slot;
        let fso = self.fso_capacity(t, choice);
        if fso <= 0.0 {
            return Err(EnvError::InvalidAction(format!(
                "satellite {choice} is not visible at slot {t}"
            )));
        }
        if fractions.len() != s.clusters
            || fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(EnvError::InvalidAction(
                "allocation must be non-negative fractions summing to 1".into(),
            ));
        }

        let rf = rf_throughput(
            fractions,
            &self.world.gains,
            s.subcarriers,
            s.bandwidth,
            s.tx_power,
            s.noise_power,
        );
        let delivered = delivered(fso, rf);
        let handover = self.world.previous.is_some_and(|p| p != choice);
        let reward = delivered / s.throughput_scale
            - if handover { s.handover_penalty } else { 0.0 };

        let [lo, hi] = s.gain_clip;
        for g in &mut self.world.gains {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *g = (*g * (s.gain_drift * z).exp()).clamp(lo, hi);
        }
        self.world.previous = Some(choice);
        self.world.slot += 1;
        self.done = self.world.slot >= s.horizon;

        let telemetry = BTreeMap::from([
            ("delivered".to_string(), delivered),
            ("fso".to_string(), fso),
            ("handover".to_string(), if handover { 1.0 } else { 0.0 }),
            ("rf".to_string(), rf),
            ("satellite".to_string(), choice as f64),
        ]);
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
            terminal: false,
            telemetry,
        })
    }
}
