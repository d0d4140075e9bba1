use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{BackendConfig, EnvConfig, ExperimentConfig, GuidanceMode, RewardMode};
use super::HarnessError;
use crate::agents::{build_agent, LossSummary, TrainStatus};
use crate::env::chain::ChainEnv;
use crate::env::sagin::{ExplorationSchedule, SaginEnv};
use crate::env::uav::{UavEnv, ENRICHED_REWARD, MANUAL_REWARD};
use crate::llm::{AuditLog, HttpBackend, LlmBackend, LlmClient, MockScript};
use crate::mdp::{EnvSpec, Environment, Transition};
use crate::nn::ReplayBuffer;
use crate::reward::RewardFunction;
use crate::roles::{
    design_reward, generate_probe_samples, write_ledger, CandidateRecord, DesignOutcome, GuidanceController,
    GuidanceDirective, HyperparamSet, LossStats, RoleError,
};

/// Weights used by the UAV reward expressions when the config names none.
pub const UAV_DEFAULT_CONSTANTS: [(&str, f64); 3] = [("w", 1.0), ("w1", 1.0), ("w2", 0.5)];

/// One line of `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    /// Undiscounted sum of the training reward.
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handovers: Option<u64>,
    pub theta_hash: String,
    /// Agent exploration statistic: epsilon, noise scale or alpha.
    pub exploration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub window: usize,
    pub final_return_mean: f64,
    pub final_return_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_energy_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_delivered_mean: Option<f64>,
    pub interventions: usize,
    pub rollbacks: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
    pub directives: Vec<GuidanceDirective>,
    pub summary: SeedSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub id: String,
    /// In the order of the configured seeds.
    pub records: Vec<RunRecord>,
    pub design: Option<Vec<CandidateRecord>>,
    pub reward: Option<RewardFunction>,
    pub dir: PathBuf,
}

pub fn build_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>, HarnessError> {
    Ok(match cfg {
        EnvConfig::Uav { scenario, .. } => Box::new(UavEnv::new(scenario.clone())?),
        EnvConfig::Sagin { scenario, .. } => Box::new(SaginEnv::new(scenario.clone())?),
        EnvConfig::Chain { scenario: c } => {
            Box::new(ChainEnv::new(c.states, c.left_reward, c.right_reward, c.gamma, c.max_steps))
        }
    })
}

fn constants(cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
    if cfg.reward.constants.is_empty() && matches!(cfg.env, EnvConfig::Uav { .. }) {
        UAV_DEFAULT_CONSTANTS.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    } else {
        cfg.reward.constants.clone()
    }
}

/// The reward override for training, or `None` for the built-in reward.
pub fn resolve_reward(
    cfg: &ExperimentConfig,
    spec: &EnvSpec,
    designed: Option<&RewardFunction>,
) -> Result<Option<RewardFunction>, HarnessError> {
    let uav = matches!(cfg.env, EnvConfig::Uav { .. });
    let source = match cfg.reward.mode {
        RewardMode::Manual => cfg.reward.manual.clone().or_else(|| uav.then(|| MANUAL_REWARD.to_string())),
        RewardMode::ScriptedEnriched => cfg.reward.enriched.clone().or_else(|| uav.then(|| ENRICHED_REWARD.to_string())),
        RewardMode::LlmDesigned => {
            let f = designed.ok_or_else(|| HarnessError::Config("llm-designed mode without a design".into()))?;
            return Ok(Some(f.clone()));
        }
    };
    let Some(source) = source else {
        return Ok(None);
    };
    let f = RewardFunction::parse(&source, &spec.feature_names, constants(cfg)).map_err(RoleError::from)?;
    f.bind(&spec.feature_names).map_err(RoleError::from)?;
    Ok(Some(f))
}

fn http_client(backend: &BackendConfig) -> Option<LlmClient> {
    match backend {
        BackendConfig::Http {
            base_url,
            token_env,
            model,
            retries,
        } => Some(LlmClient::new(LlmBackend::Http(HttpBackend {
            token_env: token_env.clone(),
            model: model.clone(),
            retries: *retries,
            ..HttpBackend::new(base_url.clone())
        }))),
        BackendConfig::Mock { .. } => None,
    }
}

fn design_client(cfg: &ExperimentConfig) -> Result<LlmClient, HarnessError> {
    if let Some(c) = http_client(&cfg.backend) {
        return Ok(c);
    }
    match &cfg.backend {
        BackendConfig::Mock { design: Some(s), .. } => Ok(LlmClient::mock(s.clone())),
        _ => Err(HarnessError::Config("llm-designed mode needs a design script for the mock backend".into())),
    }
}

/// Runs the reward designer for `cfg` without training.
pub fn design_for(cfg: &ExperimentConfig, client: &LlmClient) -> Result<DesignOutcome, HarnessError> {
    let design = cfg
        .reward
        .design
        .as_ref()
        .ok_or_else(|| HarnessError::Config("reward.design is missing".into()))?;
    let env = build_env(&cfg.env)?;
    let spec = env.spec();
    let schema = match &design.features {
        Some(f) => {
            if let Some(unknown) = f.iter().find(|n| spec.feature_index(n).is_none()) {
                return Err(HarnessError::Config(format!("design feature '{unknown}' is not an environment feature")));
            }
            f.clone()
        }
        None => spec.feature_names.clone(),
    };
    let mut ranges = design.ranges.clone();
    for n in &schema {
        let scale = spec.feature_scales[spec.feature_index(n).expect("checked above")];
        ranges.entry(n.clone()).or_insert((0.0, scale));
    }
    let mut task = design.task.clone();
    for (k, v) in constants(cfg) {
        task.constants.entry(k).or_insert(v);
    }
    let probes = generate_probe_samples(design.model_probes.then_some(client), &schema, design.probe_count, &ranges)?;
    let samples = probes.to_sample_set(&schema)?;
    Ok(design_reward(client, &task, &schema, design.n_candidates, &samples, cfg.exec)?)
}

/// Scripted guider replies: intervention `i` (from 1) proposes
/// `initial * factor^i` for every planned parameter.
pub fn guidance_script(plan: &BTreeMap<String, f64>, theta: &HyperparamSet, interventions: usize) -> Vec<String> {
    (1..=interventions)
        .map(|i| {
            let items: Vec<_> = plan
                .iter()
                .filter_map(|(name, factor)| {
                    let v0 = theta.value(name)?;
                    Some(json!({
                        "name": name,
                        "new_value": v0 * factor.powi(i as i32),
                        "rationale": format!("scheduled change by x{factor} per intervention"),
                    }))
                })
                .collect();
            json!({ "adjustments": items }).to_string()
        })
        .collect()
}

fn guidance_client(cfg: &ExperimentConfig, theta: &HyperparamSet) -> Result<Option<LlmClient>, HarnessError> {
    let interventions = cfg.episodes / cfg.guidance.settings.cadence;
    Ok(match cfg.guidance.mode {
        GuidanceMode::Off => None,
        GuidanceMode::Scripted => {
            if let Some(unknown) = cfg.guidance.plan.keys().find(|n| theta.get(n).is_none()) {
                return Err(HarnessError::Config(format!("plan names '{unknown}', which is not tunable here")));
            }
            let script = guidance_script(&cfg.guidance.plan, theta, interventions);
            Some(LlmClient::mock(MockScript::Sequence(script)))
        }
        GuidanceMode::Llm => match http_client(&cfg.backend) {
            Some(c) => Some(c),
            None => match &cfg.backend {
                BackendConfig::Mock { guidance: Some(s), .. } => Some(LlmClient::mock(s.clone())),
                _ => return Err(HarnessError::Config("llm guidance needs a guidance script for the mock backend".into())),
            },
        },
    })
}

struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    fn create(path: PathBuf) -> Result<Self, HarnessError> {
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(JsonlWriter {
            path,
            out: BufWriter::new(f),
        })
    }

    fn write<T: Serialize>(&mut self, value: &T) -> Result<(), HarnessError> {
        let line = serde_json::to_string(value).map_err(|e| HarnessError::io(&self.path, e))?;
        writeln!(self.out, "{line}").map_err(|e| HarnessError::io(&self.path, e))?;
        self.out.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn loss_stats(losses: &[LossSummary]) -> LossStats {
    let critic: Vec<f64> = losses.iter().map(|l| l.critic).collect();
    let actor: Vec<f64> = losses.iter().filter_map(|l| l.actor).collect();
    LossStats {
        critic_mean: mean_std(&critic).0,
        critic_last: critic.last().copied().unwrap_or_default(),
        actor_mean: (!actor.is_empty()).then(|| mean_std(&actor).0),
        actor_last: actor.last().copied(),
    }
}

/// Episode reset seeds are distinct across seeds and episodes.
pub fn reset_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Trains one seed. With `dir`, episode rows and directives are appended to
/// JSONL files as they are produced and a summary is written at the end.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    reward: Option<&RewardFunction>,
    dir: Option<&Path>,
) -> Result<RunRecord, HarnessError> {
    let started = Instant::now();
    let mut env = build_env(&cfg.env)?;
    let bound = reward.map(|f| f.bind(&env.spec().feature_names)).transpose().map_err(RoleError::from)?;
    let mut agent = build_agent(cfg.agent, &cfg.agent_config, env.spec(), seed)?;
    let mut schedule = cfg
        .exploration
        .map(|s| ExplorationSchedule::new(s.epsilon0, cfg.episodes, s.decay))
        .transpose()?;
    let mut theta = HyperparamSet::standard(cfg.agent, &cfg.agent_config, schedule.map(|s| s.decay))?;
    let mut client = guidance_client(cfg, &theta)?;
    let (mut rows_out, mut directives_out) = (None, None);
    if let Some(d) = dir {
        create_dir(d)?;
        rows_out = Some(JsonlWriter::create(d.join("episodes.jsonl"))?);
        directives_out = Some(JsonlWriter::create(d.join("directives.jsonl"))?);
        if let Some(c) = client.take() {
            client = Some(c.with_audit(AuditLog::open(d.join("audit.jsonl"))?));
        }
    }
    let mut controller = GuidanceController::new(cfg.guidance.settings)?;
    let mut buffer = ReplayBuffer::new(cfg.agent_config.buffer_capacity);
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut directives = Vec::new();
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut losses = Vec::new();
    let mut total_steps = 0usize;
    let uav = matches!(cfg.env, EnvConfig::Uav { .. });
    let sagin = matches!(cfg.env, EnvConfig::Sagin { .. });

    for episode in 0..cfg.episodes {
        let epsilon = schedule.map(|s| s.epsilon(episode));
        if let Some(e) = epsilon {
            agent.set_epsilon(e);
        }
        let mut obs = env.reset(reset_seed(seed, episode));
        let (mut ret, mut energy, mut delivered, mut handovers, mut steps) = (0.0, 0.0, 0.0, 0u64, 0usize);
        loop {
            let action = agent.select_action(&obs, true)?;
            let out = env.step(&action)?;
            let r = match &bound {
                Some(b) => b.evaluate(&out.observation.values).map_err(RoleError::from)?,
                None => out.reward,
            };
            ret += r;
            energy += out.telemetry.get("energy").copied().unwrap_or_default();
            delivered += out.telemetry.get("delivered").copied().unwrap_or_default();
            handovers += out.telemetry.get("handover").map_or(0, |h| *h as u64);
            buffer.push(Transition {
                state: obs.values,
                action,
                reward: r,
                next_state: out.observation.values.clone(),
                done: out.done,
                terminal: out.terminal,
                step_index: steps,
                next_mask: out.observation.mask.clone(),
            });
            steps += 1;
            total_steps += 1;
            if total_steps.is_multiple_of(cfg.train_every) {
                if let TrainStatus::Trained(l) = agent.train_step(&buffer)? {
                    losses.push(l);
                }
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        returns.push(ret);
        let row = EpisodeRow {
            episode,
            ret,
            steps,
            energy: uav.then_some(energy),
            delivered: sagin.then_some(delivered),
            handovers: sagin.then_some(handovers),
            theta_hash: theta.hash(),
            exploration: agent.exploration(),
            epsilon,
        };
        if let Some(w) = &mut rows_out {
            w.write(&row)?;
        }
        rows.push(row);

        if let Some(c) = &client {
            if controller.due(episode) {
                let d = controller.intervene(c, &returns, cfg.episodes, loss_stats(&losses), agent.exploration(), &mut theta)?;
                losses.clear();
                for h in theta.entries() {
                    if h.name == "exploration_decay" {
                        if let Some(s) = &mut schedule {
                            s.decay = h.value;
                        }
                    } else {
                        agent.set_hyperparameter(&h.name, h.value)?;
                    }
                }
                if let Some(w) = &mut directives_out {
                    w.write(&d)?;
                }
                directives.push(d);
            }
        }
    }

    let window = cfg.window();
    let tail = cfg.episodes - window;
    let (final_return_mean, final_return_std) = mean_std(&returns[tail..]);
    let tail_mean = |f: fn(&EpisodeRow) -> Option<f64>| -> Option<f64> {
        let xs: Option<Vec<f64>> = rows[tail..].iter().map(f).collect();
        xs.map(|v| mean_std(&v).0)
    };
    let summary = SeedSummary {
        seed,
        episodes: cfg.episodes,
        window,
        final_return_mean,
        final_return_std,
        final_energy_mean: tail_mean(|r| r.energy),
        final_delivered_mean: tail_mean(|r| r.delivered),
        interventions: directives.len(),
        rollbacks: directives.iter().filter(|d| d.rollback).count(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(d) = dir {
        write_json(&d.join("summary.json"), &summary)?;
    }
    Ok(RunRecord {
        seed,
        rows,
        directives,
        summary,
    })
}

/// Runs every seed of `cfg` (in parallel under `cfg.exec`) and writes
/// `<output_dir>/<id>/`: `config.json`, `candidates.jsonl` for designed
/// rewards, and one `seed-<s>/` directory per seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSet, HarnessError> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let spec = build_env(&cfg.env)?.spec().clone();

    let mut design = None;
    let mut designed = None;
    if cfg.reward.mode == RewardMode::LlmDesigned {
        let client = design_client(cfg)?.with_audit(AuditLog::open(dir.join("design_audit.jsonl"))?);
        let ledger_path = dir.join("candidates.jsonl");
        match design_for(cfg, &client) {
            Ok(outcome) => {
                write_ledger(&ledger_path, &outcome.ledger)?;
                design = Some(outcome.ledger);
                designed = Some(outcome.reward);
            }
            Err(HarnessError::Role(RoleError::DesignFailed { ledger })) => {
                write_ledger(&ledger_path, &ledger)?;
                return Err(RoleError::DesignFailed { ledger }.into());
            }
            Err(e) => return Err(e),
        }
    }
    let reward = resolve_reward(cfg, &spec, designed.as_ref())?;
    let results = cfg.exec.map(&cfg.seeds, |&seed| {
        let seed_dir = dir.join(format!("seed-{seed}"));
        run_seed(cfg, seed, reward.as_ref(), Some(&seed_dir)).map_err(|e| HarnessError::Seed {
            seed,
            source: Box::new(e),
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RunSet {
        id: cfg.id.clone(),
        records,
        design,
        reward,
        dir,
    })
}

/// Reads `seed-*/episodes.jsonl` under a run directory, keyed by seed.
pub fn load_rows(dir: &Path) -> Result<BTreeMap<u64, Vec<EpisodeRow>>, HarnessError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let path = entry.path().join("episodes.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::io(&path, e)))
            .collect::<Result<Vec<EpisodeRow>, _>>()?;
        if rows.iter().enumerate().any(|(i, r)| r.episode != i) {
            return Err(HarnessError::Config(format!("{}: episodes are not contiguous from 0", path.display())));
        }
        out.insert(seed, rows);
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!("{} holds no seed-* runs", dir.display())));
    }
    Ok(out)
}
