//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line and then
//! asserts; every threshold is a named constant below.
//!
//! Criteria 9 to 11 train full multi-seed experiments and take several
//! minutes each in release-grade test builds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use llmrl::agents::{build_agent, tqc_truncated_target, Agent, AgentConfig, AgentKind};
use llmrl::env::chain::ChainEnv;
use llmrl::env::sagin::{ExplorationSchedule, SaginEnv, SaginScenario};
use llmrl::exec::Exec;
use llmrl::harness::{
    run_experiment, summarize, BackendConfig, DesignConfig, EpisodeRow, ExperimentConfig, GuidanceMode, Metric,
    RewardMode, RunSet,
};
use llmrl::llm::{LlmClient, MockScript};
use llmrl::mdp::{Action, Environment, Transition};
use llmrl::nn::{Activation, Mlp, ReplayBuffer};
use llmrl::reward::{estimate_lipschitz, parse, AlignmentRule, SampleSet, DEFAULT_MIN_DISTANCE};
use llmrl::roles::{DesignTask, GuidanceController, GuidanceSettings, HyperparamSet, LossStats};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_ARCHITECTURES: usize = 5;
const GRAD_INPUTS: usize = 10;
const FD_STEP: f64 = 1e-6;

const CHAIN_Q_TOL: f64 = 0.05;
const CHAIN_STEPS: usize = 20_000;
const VI_TOL: f64 = 1e-10;

const TQC_INSTANCES: usize = 1_000;

const LIPSCHITZ_TOL: f64 = 1e-9;
const LIPSCHITZ_TRIALS: usize = 100;

const SCHEDULE_TUPLES: usize = 1_000;

const MASK_FUZZ_STEPS: usize = 10_000;

const UAV_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const UAV_EPISODES: usize = 300;
const UAV_MIN_REDUCTION: f64 = 0.02;
const UAV_MAX_P: f64 = 0.1;
/// Reported, not asserted: wall clock depends on the host.
const UAV_RUNTIME_TARGET_MIN: f64 = 15.0;

const SAGIN_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SAGIN_EPISODES: usize = 400;
const SAGIN_MIN_IMPROVEMENT: f64 = 0.01;
const SAGIN_CONVERGENCE_FRACTION: f64 = 0.95;
/// Reported, not asserted.
const SAGIN_RUNTIME_TARGET_MIN: f64 = 20.0;
/// Trailing window used to locate the convergence episode.
const SAGIN_SMOOTHING: usize = 10;

/// Serializes the training-heavy criteria so their wall-clock figures are
/// not inflated by each other.
fn heavy() -> std::sync::MutexGuard<'static, ()> {
    static HEAVY: Mutex<()> = Mutex::new(());
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stderr so the line survives the harness's output
/// capture for passing tests.
fn announce(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    announce(&format!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" }));
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

// ---------------------------------------------------------------- 1

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn criterion_01_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..GRAD_ARCHITECTURES {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=8));
        }
        sizes.push(rng.random_range(1..=4));
        let hidden = [Activation::Tanh, Activation::Relu, Activation::Linear][rng.random_range(0..3)];
        let output = [Activation::Tanh, Activation::Linear][rng.random_range(0..2)];
        let net = Mlp::new(&sizes, hidden, output, &mut rng).unwrap();
        for _ in 0..GRAD_INPUTS {
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(&w).map(|(o, w)| o * w).sum() };
            let trace = net.forward_trace(&x).unwrap();
            let bp = net.backward(&trace, &w).unwrap();
            // Parameters, layer by layer: weights then biases.
            for (l, layer) in net.layers().iter().enumerate() {
                for i in 0..layer.weights.len() {
                    let mut p = net.clone();
                    p.layers_mut()[l].weights[i] += FD_STEP;
                    let mut m = net.clone();
                    m.layers_mut()[l].weights[i] -= FD_STEP;
                    let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(bp.grads.layers[l].weights[i], fd));
                    checked += 1;
                }
                for i in 0..layer.bias.len() {
                    let mut p = net.clone();
                    p.layers_mut()[l].bias[i] += FD_STEP;
                    let mut m = net.clone();
                    m.layers_mut()[l].bias[i] -= FD_STEP;
                    let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(bp.grads.layers[l].bias[i], fd));
                    checked += 1;
                }
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += FD_STEP;
                let mut xm = x.clone();
                xm[i] -= FD_STEP;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(bp.input_grad[i], fd));
                checked += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < GRAD_REL_TOL && secs < 10.0;
    report(1, "gradient fidelity", pass, &format!("{checked} partials, worst rel err {worst:.2e}, {secs:.2} s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

/// Value iteration on the chain's known model, to a `VI_TOL` fixed point.
fn chain_q_star(env: &ChainEnv, gamma: f64) -> Vec<[f64; 2]> {
    let n = env.states();
    let mut q = vec![[0.0f64; 2]; n];
    loop {
        let mut delta = 0.0f64;
        let mut next = q.clone();
        for s in 1..n - 1 {
            for a in 0..2 {
                let s2 = if a == 0 { s - 1 } else { s + 1 };
                let terminal = s2 == 0 || s2 == n - 1;
                let r = if s2 == 0 {
                    0.5
                } else if s2 == n - 1 {
                    1.0
                } else {
                    0.0
                };
                let v = if terminal { 0.0 } else { q[s2][0].max(q[s2][1]) };
                next[s][a] = r + gamma * v;
                delta = delta.max((next[s][a] - q[s][a]).abs());
            }
        }
        q = next;
        if delta < VI_TOL {
            return q;
        }
    }
}

#[test]
fn criterion_02_dqn_matches_value_iteration() {
    let started = Instant::now();
    let gamma = 0.9;
    let mut env = ChainEnv::new(5, 0.5, 1.0, gamma, 20);
    let q_star = chain_q_star(&env, gamma);
    let config = AgentConfig {
        hidden: vec![32, 32],
        batch_size: 32,
        warmup: 200,
        ..AgentConfig::dqn()
    };
    let mut agent = llmrl::agents::Dqn::new(config, env.spec(), 7).unwrap();
    let mut buffer = ReplayBuffer::new(50_000);
    let mut steps = 0;
    let mut episode = 0u64;
    let mut visited = std::collections::BTreeSet::new();
    while steps < CHAIN_STEPS {
        let mut obs = env.reset(episode);
        episode += 1;
        loop {
            let action = agent.select_action(&obs, true).unwrap();
            let s = obs.values.iter().position(|&v| v == 1.0).unwrap();
            let Action::Discrete(a) = action else { unreachable!() };
            visited.insert((s, a));
            let out = env.step(&action).unwrap();
            buffer.push(Transition {
                state: obs.values,
                action,
                reward: out.reward,
                next_state: out.observation.values.clone(),
                done: out.done,
                terminal: out.terminal,
                step_index: 0,
                next_mask: None,
            });
            agent.train_step(&buffer).unwrap();
            steps += 1;
            obs = out.observation;
            if out.done || steps >= CHAIN_STEPS {
                break;
            }
        }
    }
    let mut max_err = 0.0f64;
    let mut policy_ok = true;
    for (s, star) in q_star.iter().enumerate().take(env.states() - 1).skip(1) {
        let q = agent.q_values(&env.one_hot(s)).unwrap();
        for a in 0..2 {
            if visited.contains(&(s, a)) {
                max_err = max_err.max((q[a] - star[a]).abs());
            }
        }
        let greedy = if q[1] > q[0] { 1 } else { 0 };
        let optimal = if star[1] > star[0] { 1 } else { 0 };
        policy_ok &= greedy == optimal;
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = policy_ok && max_err < CHAIN_Q_TOL && secs < 60.0;
    report(
        2,
        "value-iteration oracle",
        pass,
        &format!("greedy policy optimal: {policy_ok}, max |Q - Q*| {max_err:.4}, {} visited pairs, {secs:.1} s", visited.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Removes the largest atom `k * N` times, then averages the rest in
/// ascending order.
fn truncation_oracle(sets: &[Vec<f64>], k: usize) -> f64 {
    let mut atoms: Vec<f64> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    for _ in 0..k * sets.len() {
        let mut imax = 0;
        for i in 1..atoms.len() {
            if atoms[i] > atoms[imax] {
                imax = i;
            }
        }
        atoms.swap_remove(imax);
    }
    for i in 1..atoms.len() {
        let mut j = i;
        while j > 0 && atoms[j - 1] > atoms[j] {
            atoms.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut sum = 0.0;
    for a in &atoms {
        sum += a;
    }
    sum / atoms.len() as f64
}

#[test]
fn criterion_03_tqc_truncation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mismatches = 0;
    for _ in 0..TQC_INSTANCES {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=16);
        let k = rng.random_range(0..m);
        let sets: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-100.0..100.0)).collect())
            .collect();
        if tqc_truncated_target(&sets, k).unwrap() != truncation_oracle(&sets, k) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(3, "TQC truncation oracle", pass, &format!("{TQC_INSTANCES} instances, {mismatches} mismatches"));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_lipschitz_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    for trial in 0..LIPSCHITZ_TRIALS {
        let d = rng.random_range(1..=5);
        let names: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let src = names
            .iter()
            .zip(&c)
            .map(|(n, c)| format!("({c:.6}) * {n}"))
            .collect::<Vec<_>>()
            .join(" + ");
        let c: Vec<f64> = c.iter().map(|v| format!("{v:.6}").parse().unwrap()).collect();
        let expr = parse(&src, &names).unwrap();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let base: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();

        // One axis-aligned pair per axis: the quotient is |c_i|.
        for i in 0..d {
            let h = rng.random_range(0.1..2.0);
            let mut moved = base.clone();
            moved[i] += h;
            let set = SampleSet::new(names.clone(), vec![base.clone(), moved]).unwrap();
            let est = estimate_lipschitz(&expr, &set, DEFAULT_MIN_DISTANCE, Exec::Sequential).unwrap();
            if (est.value - c[i].abs()).abs() > LIPSCHITZ_TOL {
                failures.push(format!("trial {trial} axis {i}: {} vs {}", est.value, c[i].abs()));
            }
        }

        // Axis-aligned probe cloud: bounded by ||c||, order invariant,
        // monotone as rows are added.
        let mut rows = vec![base.clone()];
        for _ in 0..rng.random_range(3..12) {
            let mut r = rows[rng.random_range(0..rows.len())].clone();
            let i = rng.random_range(0..d);
            r[i] += rng.random_range(-2.0..2.0);
            rows.push(r);
        }
        let full = SampleSet::new(names.clone(), rows.clone()).unwrap();
        let est = estimate_lipschitz(&expr, &full, DEFAULT_MIN_DISTANCE, Exec::Sequential).unwrap();
        if est.value > norm + LIPSCHITZ_TOL {
            failures.push(format!("trial {trial}: {} exceeds ||c|| {norm}", est.value));
        }
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let est_shuffled = estimate_lipschitz(
            &expr,
            &SampleSet::new(names.clone(), shuffled).unwrap(),
            DEFAULT_MIN_DISTANCE,
            Exec::Parallel,
        )
        .unwrap();
        if est_shuffled.value != est.value {
            failures.push(format!("trial {trial}: order changed {} to {}", est.value, est_shuffled.value));
        }
        let mut previous = 0.0;
        for n in 2..=rows.len() {
            let prefix = SampleSet::new(names.clone(), rows[..n].to_vec()).unwrap();
            let v = estimate_lipschitz(&expr, &prefix, DEFAULT_MIN_DISTANCE, Exec::Sequential).unwrap().value;
            if v < previous {
                failures.push(format!("trial {trial}: fell from {previous} to {v} at {n} rows"));
            }
            previous = v;
        }
    }
    let pass = failures.is_empty();
    report(
        4,
        "Lipschitz estimator",
        pass,
        &format!("{LIPSCHITZ_TRIALS} trials, {} failures{}", failures.len(), failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_exploration_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mismatches = 0;
    let mut nonzero_after = 0;
    for _ in 0..SCHEDULE_TUPLES {
        let eps0: f64 = rng.random_range(0.0..2.0);
        let total: usize = rng.random_range(1..1_000);
        let decay: f64 = rng.random_range(1e-3..=1.0);
        let e: usize = rng.random_range(0..2 * total);
        let s = ExplorationSchedule::new(eps0, total, decay).unwrap();
        let closed = f64::max(eps0 * (1.0 - e as f64 / (decay * total as f64)), 0.0);
        if s.epsilon(e) != closed {
            mismatches += 1;
        }
        let cutoff = (decay * total as f64).ceil() as usize;
        for e in [cutoff, cutoff + 1, 2 * total] {
            if s.epsilon(e) != 0.0 {
                nonzero_after += 1;
            }
        }
    }
    let pass = mismatches == 0 && nonzero_after == 0;
    report(
        5,
        "exploration schedule",
        pass,
        &format!("{SCHEDULE_TUPLES} tuples, {mismatches} mismatches, {nonzero_after} non-zero values past the decay point"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_masking_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut steps = 0;
    let mut invisible = 0;
    let mut env_errors = 0;
    let mut scenario_index = 0u64;
    while steps < MASK_FUZZ_STEPS {
        let scenario = SaginScenario {
            satellites: rng.random_range(2..=8),
            clusters: rng.random_range(1..=5),
            visibility_threshold: rng.random_range(0.0..0.9),
            horizon: rng.random_range(20..=120),
            ..SaginScenario::default()
        };
        let Ok(mut env) = SaginEnv::new(scenario) else {
            continue;
        };
        let kind = [AgentKind::Ddpg, AgentKind::Td3, AgentKind::Tqc][scenario_index as usize % 3];
        let config = AgentConfig {
            hidden: vec![16],
            epsilon: rng.random_range(0.0..1.0),
            ..AgentConfig::default()
        };
        let mut agent = build_agent(kind, &config, env.spec(), scenario_index).unwrap();
        let mut obs = env.reset(scenario_index);
        scenario_index += 1;
        loop {
            let action = agent.select_action(&obs, rng.random_bool(0.8)).unwrap();
            let mask = obs.mask.clone().expect("SAGIN observations carry a mask");
            if let Action::Hybrid { choice, .. } = &action {
                if !mask[*choice] {
                    invisible += 1;
                }
            }
            let out = match env.step(&action) {
                Ok(o) => o,
                Err(_) => {
                    env_errors += 1;
                    break;
                }
            };
            steps += 1;
            obs = out.observation;
            if out.done || steps >= MASK_FUZZ_STEPS {
                break;
            }
        }
    }
    let pass = invisible == 0 && env_errors == 0;
    report(
        6,
        "masking safety",
        pass,
        &format!("{steps} steps over {scenario_index} scenarios, {invisible} invisible selections, {env_errors} rejected steps"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

fn guided_sagin(id: &str, episodes: usize) -> ExperimentConfig {
    let mut cfg = sagin_config(id, false);
    cfg.seeds = vec![11];
    cfg.episodes = episodes;
    cfg.guidance.mode = GuidanceMode::Llm;
    let replies: Vec<String> = (0..episodes / cfg.guidance.settings.cadence)
        .map(|i| {
            // Deliberately aggressive and partly out of range.
            format!(
                r#"{{"adjustments": [
                    {{"name": "learning_rate", "new_value": {}, "rationale": "probe"}},
                    {{"name": "entropy_alpha", "new_value": {}, "rationale": "probe"}},
                    {{"name": "batch_size", "new_value": {}, "rationale": "probe"}},
                    {{"name": "truncation_k", "new_value": {}, "rationale": "probe"}},
                    {{"name": "tau", "new_value": {}, "rationale": "probe"}},
                    {{"name": "gamma", "new_value": 0.5, "rationale": "not tunable"}}]}}"#,
                [1.0, 1e-9, 3e-3][i % 3],
                [5.0, 1e-6, 0.05][i % 3],
                [4096, 1, 48][i % 3],
                [40, -3, 1][i % 3],
                [0.9, 1e-9, 0.01][i % 3],
            )
        })
        .collect();
    cfg.backend = BackendConfig::Mock {
        design: None,
        design_path: None,
        guidance: Some(MockScript::Sequence(replies)),
        guidance_path: None,
    };
    cfg
}

#[test]
fn criterion_07_guider_safety() {
    // Full guided run: every applied value is certified and rate limited.
    let cfg = guided_sagin("guided-safety", 100);
    let set = run_experiment(&cfg).unwrap();
    let mut assertions = 0;
    let mut violations = 0;
    let mut interventions = 0;
    let mut parameters = 0;
    for r in &set.records {
        for d in &r.directives {
            interventions += 1;
            parameters = d.theta_after.len();
            for h in d.theta_after.entries() {
                let prev = d.theta_before.value(&h.name).unwrap();
                let ok = h.value >= h.lo && h.value <= h.hi && h.admissible(prev, h.value);
                violations += usize::from(!ok);
                assertions += 1;
            }
        }
    }
    let counted = assertions == interventions * parameters && interventions == cfg.episodes / cfg.guidance.settings.cadence;

    // Forced degradation: returns collapse whenever the learning rate
    // exceeds a healthy level, and the mock keeps pushing it up.
    let config = AgentConfig::default();
    let mut theta = HyperparamSet::standard(AgentKind::Tqc, &config, None).unwrap();
    let settings = GuidanceSettings::default();
    let pathological: Vec<String> = (0..10)
        .map(|_| r#"{"adjustments": [{"name": "learning_rate", "new_value": 1.0, "rationale": "go faster"}]}"#.to_string())
        .collect();
    let client = LlmClient::mock(MockScript::Sequence(pathological));
    let mut controller = GuidanceController::new(settings).unwrap();
    let mut returns = Vec::new();
    let mut rollback_at = None;
    let mut restored_equal = false;
    for window in 0..10 {
        let lr = theta.value("learning_rate").unwrap();
        let level = if lr <= 2e-3 { 100.0 + window as f64 } else { 10.0 };
        returns.extend(std::iter::repeat_n(level, settings.window));
        let snapshots_before = controller.guard.snapshots.clone();
        let d = controller
            .intervene(&client, &returns, 100, LossStats::default(), 0.0, &mut theta)
            .unwrap();
        if d.rollback && rollback_at.is_none() {
            rollback_at = Some(window);
            let means = &controller.guard.means;
            let prior = &means[..means.len() - 1];
            let best = prior
                .iter()
                .enumerate()
                .fold(0, |b, (i, m)| if *m > prior[b] { i } else { b });
            let expected = controller.guard.snapshots[best].clone();
            restored_equal = d.theta_before == expected && snapshots_before.len() + 1 == controller.guard.snapshots.len();
        }
    }
    let pass = violations == 0 && counted && rollback_at.is_some() && restored_equal;
    report(
        7,
        "guider safety",
        pass,
        &format!(
            "{assertions} range/rate checks over {interventions} interventions x {parameters} parameters, {violations} violations; forced degradation rolled back at window {rollback_at:?}, restored snapshot equal: {restored_equal}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn designer_reply(expr: &str) -> String {
    format!(r#"{{"explanation": "candidate", "reward_expression": "{expr}"}}"#)
}

fn designer_config() -> ExperimentConfig {
    let mut cfg = uav_config("designed", RewardMode::LlmDesigned, AgentKind::Td3);
    cfg.seeds = vec![0, 1];
    cfg.episodes = 3;
    cfg.reward.design = Some(DesignConfig {
        task: DesignTask {
            description: "Reduce the UAV's energy use while it serves ground terminals.".into(),
            constants: BTreeMap::new(),
            constraints: vec![],
            alignment: Some(AlignmentRule::energy_reduction()),
            min_distance: DEFAULT_MIN_DISTANCE,
        },
        features: Some(vec!["energy".into(), "position_score".into(), "penalty".into()]),
        ranges: BTreeMap::from([
            ("energy".to_string(), (0.0, 100.0)),
            ("position_score".to_string(), (0.0, 1.0)),
            ("penalty".to_string(), (1.0, 2.0)),
        ]),
        n_candidates: 3,
        probe_count: 32,
        model_probes: false,
    });
    cfg.backend = BackendConfig::Mock {
        design: Some(MockScript::Sequence(vec![
            designer_reply("-altitude*energy"),
            designer_reply("1/energy"),
            designer_reply("-(w1*energy+w2*position_score)*penalty"),
        ])),
        design_path: None,
        guidance: None,
        guidance_path: None,
    };
    cfg
}

#[test]
fn criterion_08_reward_designer() {
    let set = cached_run(&designer_config());
    let ledger = set.design.clone().expect("designed run keeps its ledger");
    let selected: Vec<usize> = ledger.iter().filter(|c| c.selected).map(|c| c.index).collect();
    let valid: Vec<&llmrl::roles::CandidateRecord> = ledger.iter().filter(|c| c.is_valid()).collect();
    let min_valid = valid
        .iter()
        .min_by(|a, b| a.lipschitz.as_ref().unwrap().value.total_cmp(&b.lipschitz.as_ref().unwrap().value))
        .map(|c| c.index);
    let causes: Vec<Vec<String>> = ledger.iter().map(|c| c.causes.clone()).collect();
    let file = std::fs::read_to_string(set.dir.join("candidates.jsonl")).unwrap();
    let pass = selected == vec![2]
        && min_valid == Some(2)
        && causes[0] == vec!["format".to_string()]
        && causes[1].first().map(String::as_str) == Some("scalar")
        && causes[2].is_empty()
        && file.lines().count() == 3;
    report(8, "reward designer pipeline", pass, &format!("selected {selected:?}, causes {causes:?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn uav_config(id: &str, mode: RewardMode, agent: AgentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"id": "{id}", "env": {{"kind": "uav", "scenario": {{"horizon": 100}}}}, "agent": "{}", "seeds": [0], "episodes": 1}}"#,
        agent.name()
    ))
    .unwrap();
    cfg.output_dir = out_dir("runs");
    cfg.reward.mode = mode;
    cfg.seeds = UAV_SEEDS.to_vec();
    cfg.episodes = UAV_EPISODES;
    cfg.agent_config = AgentConfig {
        hidden: vec![64, 64],
        batch_size: 64,
        warmup: 500,
        reward_scale: 0.01,
        exploration_noise: 0.1,
        ..AgentConfig::default()
    };
    cfg
}

fn arm_rows(set: &RunSet) -> BTreeMap<u64, Vec<EpisodeRow>> {
    set.records.iter().map(|r| (r.seed, r.rows.clone())).collect()
}

#[test]
fn criterion_09_uav_enriched_reward_energy() {
    let _serial = heavy();
    let (enriched, secs_e) = timed_run(&uav_config("uav-td3-enriched", RewardMode::ScriptedEnriched, AgentKind::Td3));
    let (manual, secs_m) = timed_run(&uav_config("uav-td3-manual", RewardMode::Manual, AgentKind::Td3));
    let minutes = (secs_e + secs_m) / 60.0;
    let window = uav_config("w", RewardMode::Manual, AgentKind::Td3).window();
    let c = summarize(&arm_rows(&enriched), &arm_rows(&manual), window, Metric::Energy).unwrap();

    let ddpg_e = cached_run(&uav_config("uav-ddpg-enriched", RewardMode::ScriptedEnriched, AgentKind::Ddpg));
    let ddpg_m = cached_run(&uav_config("uav-ddpg-manual", RewardMode::Manual, AgentKind::Ddpg));
    let d = summarize(&arm_rows(&ddpg_e), &arm_rows(&ddpg_m), window, Metric::Energy).unwrap();
    announce(&format!(
        "criterion  9 secondary DDPG (logged only): enriched {:.2} vs manual {:.2} energy, reduction {:+.2}%, p {:?}",
        d.a.mean,
        d.b.mean,
        100.0 * d.improvement.unwrap_or(f64::NAN),
        d.p_value
    ));

    let reduction = c.improvement.unwrap_or(f64::NEG_INFINITY);
    let p = c.p_value.unwrap_or(1.0);
    let pass = c.a.mean <= c.b.mean && reduction >= UAV_MIN_REDUCTION && p < UAV_MAX_P;
    report(
        9,
        "UAV enriched vs manual reward (TD3)",
        pass,
        &format!(
            "final-window energy {:.2} vs {:.2}, reduction {:+.2}% (need >= {:.0}%), sign test p {p:.4} (need < {UAV_MAX_P}), per-seed enriched {:?} manual {:?}, {minutes:.1} min (target < {UAV_RUNTIME_TARGET_MIN} min)",
            c.a.mean,
            c.b.mean,
            100.0 * reduction,
            100.0 * UAV_MIN_REDUCTION,
            c.a.final_means,
            c.b.final_means
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

fn sagin_config(id: &str, guided: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"id": "{id}", "env": {{"kind": "sagin", "scenario": {{"horizon": 50}}}}, "agent": "tqc", "seeds": [0], "episodes": 1}}"#
    ))
    .unwrap();
    cfg.output_dir = out_dir("runs");
    cfg.seeds = SAGIN_SEEDS.to_vec();
    cfg.episodes = SAGIN_EPISODES;
    cfg.agent_config = AgentConfig {
        hidden: vec![64, 64],
        batch_size: 64,
        warmup: 500,
        n_quantiles: 25,
        k_drop_per_critic: 2,
        ..AgentConfig::default()
    };
    if guided {
        cfg.guidance.mode = GuidanceMode::Scripted;
        cfg.guidance.plan = BTreeMap::from([("entropy_alpha".to_string(), 0.9)]);
    }
    cfg
}

/// First episode whose trailing mean reaches `fraction` of `target`.
fn convergence_episode(returns: &[f64], target: f64, fraction: f64) -> Option<usize> {
    (SAGIN_SMOOTHING..=returns.len()).find_map(|end| {
        let mean = returns[end - SAGIN_SMOOTHING..end].iter().sum::<f64>() / SAGIN_SMOOTHING as f64;
        (mean >= fraction * target).then_some(end - 1)
    })
}

#[test]
fn criterion_10_sagin_guided_tqc() {
    let _serial = heavy();
    let (guided, secs_g) = timed_run(&sagin_config("sagin-tqc-guided", true));
    let (plain, secs_p) = timed_run(&sagin_config("sagin-tqc-plain", false));
    let minutes = (secs_g + secs_p) / 60.0;
    let window = sagin_config("w", false).window();
    let c = summarize(&arm_rows(&guided), &arm_rows(&plain), window, Metric::Return).unwrap();
    let n = guided.records[0].rows.len();
    let mean_curve: Vec<f64> = (0..n)
        .map(|e| guided.records.iter().map(|r| r.rows[e].ret).sum::<f64>() / guided.records.len() as f64)
        .collect();
    let converged = convergence_episode(&mean_curve, c.a.mean, SAGIN_CONVERGENCE_FRACTION);
    let improvement = c.improvement.unwrap_or(f64::NEG_INFINITY);
    let pass = c.a.mean >= c.b.mean
        && improvement >= SAGIN_MIN_IMPROVEMENT
        && converged.is_some_and(|e| e < SAGIN_EPISODES);
    report(
        10,
        "SAGIN guided vs plain TQC",
        pass,
        &format!(
            "final-window reward {:.4} vs {:.4}, improvement {:+.2}% (need >= {:.0}%), p {:?}, guided curve reaches {:.0}% of its final mean at episode {converged:?}, {minutes:.1} min (target < {SAGIN_RUNTIME_TARGET_MIN} min)",
            c.a.mean,
            c.b.mean,
            100.0 * improvement,
            100.0 * SAGIN_MIN_IMPROVEMENT,
            c.p_value,
            100.0 * SAGIN_CONVERGENCE_FRACTION
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 11

/// First-run results shared between criteria 8 to 10 and the rerun check,
/// with the wall-clock seconds each took. Concurrent callers for the same
/// id wait for a single run.
type Slot = Arc<OnceLock<(RunSet, f64)>>;

fn cache_slot(id: &str) -> Slot {
    static CACHE: OnceLock<Mutex<BTreeMap<String, Slot>>> = OnceLock::new();
    let map = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    map.lock().unwrap().entry(id.to_string()).or_default().clone()
}

fn timed_run(cfg: &ExperimentConfig) -> (RunSet, f64) {
    cache_slot(&cfg.id)
        .get_or_init(|| {
            let started = Instant::now();
            let set = run_experiment(cfg).unwrap();
            let secs = started.elapsed().as_secs_f64();
            for r in &set.records {
                println!(
                    "  {} seed {}: final return {:.4}, energy {:?}, delivered {:?}",
                    cfg.id,
                    r.seed,
                    r.summary.final_return_mean,
                    r.summary.final_energy_mean,
                    r.summary.final_delivered_mean,
                );
            }
            println!("  {} finished in {secs:.1} s", cfg.id);
            (set, secs)
        })
        .clone()
}

fn cached_run(cfg: &ExperimentConfig) -> RunSet {
    timed_run(cfg).0
}

fn row_bytes(set: &RunSet) -> Vec<Vec<u8>> {
    set.records
        .iter()
        .map(|r| {
            let path = set.dir.join(format!("seed-{}", r.seed)).join("episodes.jsonl");
            std::fs::read(path).unwrap()
        })
        .collect()
}

#[test]
fn criterion_11_determinism() {
    let _serial = heavy();
    let configs = vec![
        designer_config(),
        uav_config("uav-td3-enriched", RewardMode::ScriptedEnriched, AgentKind::Td3),
        uav_config("uav-td3-manual", RewardMode::Manual, AgentKind::Td3),
        uav_config("uav-ddpg-enriched", RewardMode::ScriptedEnriched, AgentKind::Ddpg),
        uav_config("uav-ddpg-manual", RewardMode::Manual, AgentKind::Ddpg),
        sagin_config("sagin-tqc-guided", true),
        sagin_config("sagin-tqc-plain", false),
    ];
    let mut differing = Vec::new();
    let mut compared = 0;
    for cfg in configs {
        let first = cached_run(&cfg);
        let first_bytes = row_bytes(&first);
        // The rerun writes elsewhere and runs its seeds sequentially.
        let mut again = cfg.clone();
        again.output_dir = out_dir("rerun");
        again.exec = Exec::Sequential;
        let second = run_experiment(&again).unwrap();
        let second_bytes = row_bytes(&second);
        compared += first_bytes.len();
        if first_bytes != second_bytes || arm_rows(&first) != arm_rows(&second) {
            differing.push(cfg.id.clone());
        }
    }
    let pass = differing.is_empty();
    report(
        11,
        "determinism",
        pass,
        &format!("{compared} episode logs compared byte for byte, differing runs: {differing:?}"),
    );
    assert!(pass);
}
