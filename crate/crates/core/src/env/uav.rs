//! A UAV collecting data from ground IoT terminals on a battery budget.
//!
//! Each slot the UAV is commanded a horizontal velocity. Speeds at or below
//! the hover threshold mean "hold position": the UAV hovers and collects the
//! backlog of every terminal inside the collection radius. Per-slot energy is
//!
//! ```text
//! E = c_move * |v|^2 + c_hover * hover + c_tx * collected
//! ```
//!
//! and is drawn from the battery. The default hover threshold
//! `sqrt(c_hover / c_move)` makes `E` continuous in the commanded speed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Action, ActionSpace, EnvError, EnvSpec, Environment, Observation, StepOutcome};

/// Reward with the energy cost alone.
pub const MANUAL_REWARD: &str = "-w*energy*penalty";
/// Energy cost offset by how central the UAV sits among the terminals.
pub const ENRICHED_REWARD: &str = "-(w1*energy - w2*position_score)*penalty";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "position")]
pub enum StartRule {
    /// Uniform over the area, drawn from the reset seed.
    Random,
    Mbs,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UavScenario {
    /// Side of the square service area, meters.
    pub area_size: f64,
    /// Explicit terminal layout; generated from `layout_seed` when absent.
    pub terminals: Option<Vec<[f64; 2]>>,
    pub n_terminals: usize,
    pub layout_seed: u64,
    pub collection_radius: f64,
    /// Speed limit, meters per slot.
    pub v_max: f64,
    /// Commanded speeds at or below this hover; defaults to `sqrt(c_hover / c_move)`.
    pub hover_speed: Option<f64>,
    pub altitude: f64,
    pub battery_j: f64,
    pub c_move: f64,
    pub c_hover: f64,
    pub c_tx: f64,
    /// Data units a terminal accumulates per slot.
    pub data_per_slot: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub mbs: [f64; 2],
    pub start: StartRule,
    pub critical_battery_frac: f64,
}

impl Default for UavScenario {
    fn default() -> Self {
        UavScenario {
            area_size: 1000.0,
            terminals: None,
            n_terminals: 10,
            layout_seed: 7,
            collection_radius: 50.0,
            v_max: 50.0,
            hover_speed: None,
            altitude: 100.0,
            battery_j: 50_000.0,
            c_move: 0.5,
            c_hover: 1.0,
            c_tx: 0.1,
            data_per_slot: 1.0,
            horizon: 200,
            gamma: 0.99,
            mbs: [0.0, 0.0],
            start: StartRule::Random,
            critical_battery_frac: 0.1,
        }
    }
}

/// Energy drawn during one slot, joules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub movement: f64,
    pub hover: f64,
    pub transmit: f64,
}

impl EnergyLedger {
    pub fn total(&self) -> f64 {
        self.movement + self.hover + self.transmit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavWorld {
    pub terminals: Vec<[f64; 2]>,
    pub freshness: Vec<f64>,
    pub position: [f64; 2],
    pub altitude: f64,
    pub battery: f64,
    pub mbs: [f64; 2],
    pub last_ledger: EnergyLedger,
    pub last_penalty: f64,
}

impl UavWorld {
    pub fn centroid(&self) -> [f64; 2] {
        centroid(&self.terminals)
    }
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    [sx / n, sy / n]
}

/// `1 / (1 + d)` with `d` the UAV-to-centroid distance divided by `scale`.
pub fn position_score(position: [f64; 2], terminals: &[[f64; 2]], scale: f64) -> f64 {
    let c = centroid(terminals);
    let d = ((position[0] - c[0]).powi(2) + (position[1] - c[1]).powi(2)).sqrt() / scale;
    1.0 / (1.0 + d)
}

pub struct UavEnv {
    scenario: UavScenario,
    spec: EnvSpec,
    world: UavWorld,
    hover_speed: f64,
    diagonal: f64,
    steps: usize,
    done: bool,
    started: bool,
}

const FIXED_FEATURES: [&str; 8] = [
    "uav_x",
    "uav_y",
    "centroid_dx",
    "centroid_dy",
    "battery_frac",
    "energy",
    "position_score",
    "penalty",
];

impl UavEnv {
    pub fn new(scenario: UavScenario) -> Result<Self, EnvError> {
        let s = &scenario;
        let positive = [
            ("area_size", s.area_size),
            ("collection_radius", s.collection_radius),
            ("v_max", s.v_max),
            ("battery_j", s.battery_j),
            ("c_move", s.c_move),
        ];
        if let Some((n, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(EnvError::Config(format!("{n} must be positive, got {v}")));
        }
        if s.c_hover < 0.0 || s.c_tx < 0.0 || s.data_per_slot < 0.0 {
            return Err(EnvError::Config("energy coefficients must be non-negative".into()));
        }
        let terminals = match &s.terminals {
            Some(t) if t.is_empty() => {
                return Err(EnvError::Config("need at least one terminal".into()))
            }
            Some(t) => t.clone(),
            None => {
                if s.n_terminals == 0 {
                    return Err(EnvError::Config("need at least one terminal".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.layout_seed);
                (0..s.n_terminals)
                    .map(|_| {
                        [
                            rng.random_range(0.0..=s.area_size),
                            rng.random_range(0.0..=s.area_size),
                        ]
                    })
                    .collect()
            }
        };
        let inside = |p: &[f64; 2]| p.iter().all(|c| (0.0..=s.area_size).contains(c));
        if !terminals.iter().all(inside) || !inside(&s.mbs) {
            return Err(EnvError::Config("terminals and MBS must lie inside the area".into()));
        }
        if let StartRule::Fixed(p) = &s.start {
            if !inside(p) {
                return Err(EnvError::Config("start position outside the area".into()));
            }
        }
        let hover_speed = s.hover_speed.unwrap_or((s.c_hover / s.c_move).sqrt());

        let mut features: Vec<(String, f64)> = FIXED_FEATURES
            .iter()
            .zip([
                s.area_size,
                s.area_size,
                s.area_size,
                s.area_size,
                1.0,
                100.0,
                1.0,
                1.0,
            ])
            .map(|(n, sc)| (n.to_string(), sc))
            .collect();
        features.extend((0..terminals.len()).map(|i| (format!("freshness_{i}"), s.horizon as f64)));
        let half = s.v_max / std::f64::consts::SQRT_2;
        let spec = EnvSpec::new(
            "uav",
            ActionSpace::Continuous {
                low: vec![-half, -half],
                high: vec![half, half],
            },
            s.gamma,
            s.horizon,
            features,
        )?;
        let world = UavWorld {
            freshness: vec![0.0; terminals.len()],
            terminals,
            position: s.mbs,
            altitude: s.altitude,
            battery: s.battery_j,
            mbs: s.mbs,
            last_ledger: EnergyLedger::default(),
            last_penalty: 1.0,
        };
        let diagonal = s.area_size * std::f64::consts::SQRT_2;
        Ok(UavEnv {
            scenario,
            spec,
            world,
            hover_speed,
            diagonal,
            steps: 0,
            done: false,
            started: false,
        })
    }

    pub fn scenario(&self) -> &UavScenario {
        &self.scenario
    }

    pub fn world(&self) -> &UavWorld {
        &self.world
    }

    pub fn hover_speed(&self) -> f64 {
        self.hover_speed
    }

    /// Distance normalization for the position score (area diagonal).
    pub fn score_scale(&self) -> f64 {
        self.diagonal
    }

    pub fn position_score(&self) -> f64 {
        position_score(self.world.position, &self.world.terminals, self.diagonal)
    }

    fn observe(&self) -> Observation {
        let w = &self.world;
        let c = w.centroid();
        let mut v = vec![
            w.position[0],
            w.position[1],
            c[0] - w.position[0],
            c[1] - w.position[1],
            w.battery / self.scenario.battery_j,
            w.last_ledger.total(),
            self.position_score(),
            w.last_penalty,
        ];
        v.extend(&w.freshness);
        Observation::new(v)
    }
}

impl Environment for UavEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let s = &self.scenario;
        self.world.position = match &s.start {
            StartRule::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                [
                    rng.random_range(0.0..=s.area_size),
                    rng.random_range(0.0..=s.area_size),
                ]
            }
            StartRule::Mbs => s.mbs,
            StartRule::Fixed(p) => *p,
        };
        self.world.freshness.iter_mut().for_each(|f| *f = 0.0);
        self.world.battery = s.battery_j;
        self.world.last_ledger = EnergyLedger::default();
        self.world.last_penalty = 1.0;
        self.steps = 0;
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
        let v = match action {
            Action::Continuous(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => [v[0], v[1]],
            other => {
                return Err(EnvError::InvalidAction(format!(
                    "expected a finite 2-D velocity, got {other:?}"
                )))
            }
        };
        let s = &self.scenario;
        let speed = v[0].hypot(v[1]);
        if speed > s.v_max * (1.0 + 1e-12) {
            return Err(EnvError::InvalidAction(format!(
                "speed {speed:.3} exceeds limit {}",
                s.v_max
            )));
        }
        let hover = speed <= self.hover_speed;

        let mut ledger = EnergyLedger::default();
        let mut violation = false;
        let w = &mut self.world;
        if hover {
            ledger.hover = s.c_hover;
        } else {
            ledger.movement = s.c_move * speed * speed;
            for (p, dv) in w.position.iter_mut().zip(v) {
                let next = *p + dv;
                let clamped = next.clamp(0.0, s.area_size);
                violation |= clamped != next;
                *p = clamped;
            }
        }

        w.freshness.iter_mut().for_each(|f| *f += 1.0);
        let mut collected = 0.0;
        if hover {
            for (t, f) in w.terminals.iter().zip(w.freshness.iter_mut()) {
                let d = (t[0] - w.position[0]).hypot(t[1] - w.position[1]);
                if d <= s.collection_radius {
                    collected += *f * s.data_per_slot;
                    *f = 0.0;
                }
            }
        }
        ledger.transmit = s.c_tx * collected;

        let energy = ledger.total();
        let before = w.battery;
        w.battery = before - energy;
        let depleted = w.battery <= 0.0;
        if depleted {
            w.battery = 0.0;
        }
        let battery_frac = w.battery / s.battery_j;
        let penalty = if violation || battery_frac < s.critical_battery_frac {
            2.0
        } else {
            1.0
        };
        w.last_ledger = ledger;
        w.last_penalty = penalty;

        self.steps += 1;
        self.done = depleted || self.steps >= s.horizon;
        let telemetry = BTreeMap::from([
            ("battery".to_string(), w.battery),
            ("collected".to_string(), collected),
            ("energy".to_string(), energy),
            ("hover".to_string(), if hover { 1.0 } else { 0.0 }),
            ("hover_j".to_string(), ledger.hover),
            ("move_j".to_string(), ledger.movement),
            ("tx_j".to_string(), ledger.transmit),
            ("violation".to_string(), if violation { 1.0 } else { 0.0 }),
            ("x".to_string(), w.position[0]),
            ("y".to_string(), w.position[1]),
        ]);
        Ok(StepOutcome {
            observation: self.observe(),
            reward: -energy * penalty,
            done: self.done,
            terminal: depleted,
            telemetry,
        })
    }
}
