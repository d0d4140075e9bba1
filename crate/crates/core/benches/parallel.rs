//! Sequential vs rayon execution for the three data-parallel paths: the
//! pairwise Lipschitz scan, candidate assessment over probes, and
//! independent training seeds.

use std::collections::BTreeMap;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use llmrl::exec::Exec;
use llmrl::harness::{run_seed, ExperimentConfig};
use llmrl::reward::{estimate_lipschitz, parse, SampleSet, DEFAULT_MIN_DISTANCE};
use llmrl::roles::{assess_candidate, fallback_grid, DesignTask};
use std::hint::black_box;

fn probes(n: usize) -> (Vec<String>, SampleSet) {
    let names: Vec<String> = ["energy", "position_score", "penalty", "battery_frac"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ranges: BTreeMap<String, (f64, f64)> = names.iter().map(|n| (n.clone(), (0.0, 10.0))).collect();
    let rows = fallback_grid(&names, n, &ranges).unwrap();
    let set = SampleSet::from_maps(&names, &rows).unwrap();
    (names, set)
}

fn lipschitz(c: &mut Criterion) {
    let (names, samples) = probes(1500);
    let expr = parse("-(energy - 0.5 * position_score) * penalty + tanh(battery_frac)", &names).unwrap();
    let mut group = c.benchmark_group("lipschitz_1500");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(estimate_lipschitz(&expr, &samples, DEFAULT_MIN_DISTANCE, exec).unwrap()))
        });
    }
    group.finish();
}

fn assessment(c: &mut Criterion) {
    let (names, samples) = probes(400);
    let task = DesignTask {
        description: "bench".into(),
        constants: BTreeMap::from([("w2".to_string(), 0.5)]),
        constraints: vec![],
        alignment: None,
        min_distance: DEFAULT_MIN_DISTANCE,
    };
    let mut group = c.benchmark_group("assess_candidate_400");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                black_box(assess_candidate(
                    0,
                    String::new(),
                    "-(energy - w2 * position_score) * penalty".into(),
                    &task,
                    &names,
                    &samples,
                    exec,
                ))
            })
        });
    }
    group.finish();
}

fn seeds(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_json(
        r#"{"id": "bench", "env": {"kind": "sagin", "scenario": {"horizon": 20}}, "agent": "tqc",
            "agent_config": {"hidden": [32, 32], "batch_size": 32, "warmup": 64, "n_quantiles": 10},
            "seeds": [0, 1, 2, 3], "episodes": 5}"#,
    )
    .unwrap();
    let mut group = c.benchmark_group("tqc_seeds_4");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| black_box(exec.map(&cfg.seeds, |&s| run_seed(&cfg, s, None, None).unwrap().rows.len())))
        });
    }
    group.finish();
}

criterion_group!(benches, lipschitz, assessment, seeds);
criterion_main!(benches);
