use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RoleError;
use crate::exec::Exec;
use crate::llm::{extract_json, render_prompt, LlmClient, LlmError};
use crate::reward::{
    estimate_lipschitz, validate_source, AlignmentRule, DslError, LipschitzEstimate, RewardFunction, SampleSet,
    Violation, DEFAULT_MIN_DISTANCE,
};

/// What the reward designer is asked to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTask {
    pub description: String,
    /// Named weights the expression may use alongside the features.
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub alignment: Option<AlignmentRule>,
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

fn default_min_distance() -> f64 {
    DEFAULT_MIN_DISTANCE
}

/// One generated candidate and everything learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub explanation: String,
    pub source: String,
    pub violations: Vec<Violation>,
    pub causes: Vec<String>,
    pub node_count: Option<usize>,
    pub lipschitz: Option<LipschitzEstimate>,
    pub selected: bool,
}

impl CandidateRecord {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.lipschitz.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub selected: usize,
    pub reward: RewardFunction,
    pub ledger: Vec<CandidateRecord>,
}

impl DesignOutcome {
    pub fn selected_record(&self) -> &CandidateRecord {
        &self.ledger[self.selected]
    }
}

const OUTPUT_SCHEMA: &str =
    r#"{"explanation": "<one or two sentences>", "reward_expression": "<expression over the listed names>"}"#;
const FUNCTIONS: &str = "min, max, abs, clip(x, lo, hi), exp, log, sqrt, tanh";

fn render(task: &DesignTask, schema: &[String]) -> Result<crate::llm::ChatRequest, LlmError> {
    let constants = if task.constants.is_empty() {
        "(none)".to_string()
    } else {
        task.constants
            .iter()
            .map(|(k, v)| format!("- {k} = {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let constraints = if task.constraints.is_empty() {
        "(none)".to_string()
    } else {
        task.constraints.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n")
    };
    let vars = BTreeMap::from([
        ("task_description".to_string(), task.description.clone()),
        ("features".to_string(), schema.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n")),
        ("constants".to_string(), constants),
        ("constraints".to_string(), constraints),
        ("functions".to_string(), FUNCTIONS.to_string()),
        ("output_schema".to_string(), OUTPUT_SCHEMA.to_string()),
    ]);
    render_prompt("reward_designer", &vars)
}

fn parse_reply(text: &str) -> Result<(String, String), String> {
    let v = extract_json(text).map_err(|e| e.to_string())?;
    let get = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
    match (get("explanation"), get("reward_expression")) {
        (Some(e), Some(r)) => Ok((e, r)),
        _ => Err("the object needs string fields 'explanation' and 'reward_expression'".into()),
    }
}

/// Evaluates one candidate text: validation, then a Lipschitz estimate
/// over the probes.
pub fn assess_candidate(
    index: usize,
    explanation: String,
    source: String,
    task: &DesignTask,
    schema: &[String],
    probes: &SampleSet,
    exec: Exec,
) -> CandidateRecord {
    let mut full_schema = schema.to_vec();
    full_schema.extend(task.constants.keys().filter(|k| !schema.contains(k)).cloned());
    let table = probes.with_constants(&task.constants);
    let mut record = CandidateRecord {
        index,
        explanation,
        source,
        violations: Vec::new(),
        causes: Vec::new(),
        node_count: None,
        lipschitz: None,
        selected: false,
    };
    match validate_source(&record.source, &full_schema, &table, task.alignment.as_ref()) {
        Err(violations) => record.violations = violations,
        Ok(expr) => {
            record.node_count = Some(expr.node_count());
            match estimate_lipschitz(&expr, &table, task.min_distance, exec) {
                Ok(est) => record.lipschitz = Some(est),
                Err(error) => record.violations.push(Violation::NonScalar { probe: 0, error }),
            }
        }
    }
    record.causes = record.violations.iter().map(|v| v.cause().to_string()).collect();
    record
}

/// Index of the valid candidate with the smallest estimate; ties go to the
/// smaller tree, then to the earlier candidate.
pub fn select_candidate(ledger: &[CandidateRecord]) -> Option<usize> {
    ledger
        .iter()
        .filter(|c| c.is_valid())
        .min_by(|a, b| {
            let la = a.lipschitz.as_ref().map_or(f64::INFINITY, |l| l.value);
            let lb = b.lipschitz.as_ref().map_or(f64::INFINITY, |l| l.value);
            la.total_cmp(&lb)
                .then(a.node_count.cmp(&b.node_count))
                .then(a.index.cmp(&b.index))
        })
        .map(|c| c.index)
}

/// Asks for `n_candidates` reward expressions, validates each against the
/// schema and probes, and selects the smoothest valid one.
pub fn design_reward(
    client: &LlmClient,
    task: &DesignTask,
    schema: &[String],
    n_candidates: usize,
    probes: &SampleSet,
    exec: Exec,
) -> Result<DesignOutcome, RoleError> {
    if n_candidates == 0 {
        return Err(RoleError::Config("n_candidates must be at least 1".into()));
    }
    if schema.is_empty() {
        return Err(RoleError::Config("feature schema is empty".into()));
    }
    let request = render(task, schema)?;
    let mut ledger = Vec::with_capacity(n_candidates);
    for index in 0..n_candidates {
        let record = match client.complete_parsed(&request, parse_reply) {
            Ok((explanation, source)) => assess_candidate(index, explanation, source, task, schema, probes, exec),
            Err(LlmError::Invalid { reason, raw }) => {
                let violations = vec![Violation::Parse {
                    error: DslError::Syntax {
                        position: 0,
                        message: format!("reply rejected: {reason}"),
                    },
                }];
                CandidateRecord {
                    index,
                    explanation: String::new(),
                    source: raw,
                    causes: vec!["format".into()],
                    violations,
                    node_count: None,
                    lipschitz: None,
                    selected: false,
                }
            }
            Err(e) => return Err(e.into()),
        };
        ledger.push(record);
    }
    let Some(selected) = select_candidate(&ledger) else {
        return Err(RoleError::DesignFailed { ledger });
    };
    ledger[selected].selected = true;
    let reward = RewardFunction::parse(&ledger[selected].source, schema, task.constants.clone())?;
    Ok(DesignOutcome {
        selected,
        reward,
        ledger,
    })
}

pub fn write_ledger(path: &Path, ledger: &[CandidateRecord]) -> Result<(), RoleError> {
    let mut f = std::fs::File::create(path).map_err(|e| RoleError::Io(format!("{}: {e}", path.display())))?;
    for c in ledger {
        let line = serde_json::to_string(c).map_err(|e| RoleError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| RoleError::Io(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockScript;
    use crate::reward::Direction;
    use proptest::prelude::*;

    fn reply(expr: &str) -> String {
        format!(r#"Here it is: {{"explanation": "candidate", "reward_expression": "{expr}"}}"#)
    }

    fn uav_task() -> DesignTask {
        DesignTask {
            description: "minimize UAV energy".into(),
            constants: BTreeMap::from([("w1".to_string(), 1.0), ("w2".to_string(), 0.5)]),
            constraints: vec![],
            alignment: Some(AlignmentRule::energy_reduction()),
            min_distance: DEFAULT_MIN_DISTANCE,
        }
    }

    fn uav_probes() -> (Vec<String>, SampleSet) {
        let schema: Vec<String> = ["energy", "position_score", "penalty"].iter().map(|s| s.to_string()).collect();
        let ranges = BTreeMap::from([
            ("energy".to_string(), (0.0, 100.0)),
            ("position_score".to_string(), (0.0, 1.0)),
            ("penalty".to_string(), (1.0, 2.0)),
        ]);
        let probes = crate::roles::generate_probe_samples(None, &schema, 16, &ranges).unwrap();
        let set = probes.to_sample_set(&schema).unwrap();
        (schema, set)
    }

    #[test]
    fn three_candidate_script() {
        let (schema, probes) = uav_probes();
        let client = LlmClient::mock(MockScript::Sequence(vec![
            reply("-altitude*energy"),
            reply("1/energy"),
            reply("-(w1*energy+w2*position_score)*penalty"),
        ]));
        let out = design_reward(&client, &uav_task(), &schema, 3, &probes, Exec::Sequential).unwrap();
        assert_eq!(out.selected, 2);
        assert_eq!(out.ledger[0].causes, vec!["format"]);
        assert_eq!(out.ledger[1].causes.first().map(String::as_str), Some("scalar"));
        assert!(out.ledger[2].selected && out.ledger.iter().filter(|c| c.selected).count() == 1);
    }

    #[test]
    fn smaller_slope_wins() {
        let names = vec!["energy".to_string()];
        let probes = SampleSet::new(names.clone(), vec![vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let task = DesignTask {
            description: "t".into(),
            constants: BTreeMap::new(),
            constraints: vec![],
            alignment: None,
            min_distance: DEFAULT_MIN_DISTANCE,
        };
        let client = LlmClient::mock(MockScript::Sequence(vec![reply("-3*energy"), reply("-energy")]));
        let out = design_reward(&client, &task, &names, 2, &probes, Exec::Sequential).unwrap();
        assert_eq!(out.selected, 1);
        assert_eq!(out.ledger[1].lipschitz.as_ref().unwrap().value, 1.0);
        assert_eq!(out.ledger[0].lipschitz.as_ref().unwrap().value, 3.0);
    }

    #[test]
    fn singleton_and_total_failure() {
        let (schema, probes) = uav_probes();
        let client = LlmClient::mock(MockScript::Sequence(vec![reply("-energy")]));
        let out = design_reward(&client, &uav_task(), &schema, 1, &probes, Exec::Sequential).unwrap();
        assert_eq!(out.selected, 0);

        let client = LlmClient::mock(MockScript::Sequence(vec![reply("0"), "not json".into(), "still not".into()]));
        match design_reward(&client, &uav_task(), &schema, 2, &probes, Exec::Sequential) {
            Err(RoleError::DesignFailed { ledger }) => {
                assert_eq!(ledger[0].causes, vec!["alignment"]);
                assert_eq!(ledger[1].causes, vec!["format"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_lists_features_and_constraints() {
        let mut task = uav_task();
        task.constraints = vec!["use only listed names".into()];
        let (schema, _) = uav_probes();
        let req = render(&task, &schema).unwrap();
        let user = &req.messages[1].content;
        assert!(user.contains("- energy") && user.contains("- use only listed names") && user.contains("w2 = 0.5"));
    }

    #[test]
    fn tie_breaks_by_size_then_order() {
        let names = vec!["x".to_string()];
        let probes = SampleSet::new(names.clone(), vec![vec![0.0], vec![1.0]]).unwrap();
        let task = DesignTask {
            description: "t".into(),
            constants: BTreeMap::new(),
            constraints: vec![],
            alignment: None,
            min_distance: DEFAULT_MIN_DISTANCE,
        };
        let ledger: Vec<CandidateRecord> = ["x + 0", "x", "0 + x", "x"]
            .iter()
            .enumerate()
            .map(|(i, s)| assess_candidate(i, String::new(), s.to_string(), &task, &names, &probes, Exec::Sequential))
            .collect();
        assert_eq!(select_candidate(&ledger), Some(1));
    }

    proptest! {
        #[test]
        fn selection_is_minimal_and_scale_invariant(
            slopes in proptest::collection::vec(-8i32..8, 1..6),
            exponent in -3i32..4,
        ) {
            let names = vec!["energy".to_string(), "d".to_string()];
            let probes = SampleSet::new(
                names.clone(),
                vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 3.0]],
            ).unwrap();
            let task = DesignTask {
                description: "t".into(),
                constants: BTreeMap::new(),
                constraints: vec![],
                alignment: Some(AlignmentRule { feature: "energy".into(), direction: Direction::Decreasing, min_fraction: 0.5, step: 0.1 }),
                min_distance: DEFAULT_MIN_DISTANCE,
            };
            let exprs: Vec<String> = slopes.iter().map(|s| format!("{s}*energy - d")).collect();
            let c = 2f64.powi(exponent);
            let assess = |srcs: &[String]| -> Vec<CandidateRecord> {
                srcs.iter().enumerate()
                    .map(|(i, s)| assess_candidate(i, String::new(), s.clone(), &task, &names, &probes, Exec::Sequential))
                    .collect()
            };
            let base = assess(&exprs);
            let scaled = assess(&exprs.iter().map(|e| format!("{c}*({e})")).collect::<Vec<_>>());
            let pick = select_candidate(&base);
            prop_assert_eq!(pick, select_candidate(&scaled));
            if let Some(i) = pick {
                let best = base[i].lipschitz.as_ref().unwrap().value;
                for r in base.iter().filter(|r| r.is_valid()) {
                    prop_assert!(best <= r.lipschitz.as_ref().unwrap().value);
                }
            }
        }
    }
}
