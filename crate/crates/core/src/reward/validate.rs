use serde::{Deserialize, Serialize};

use super::ast::RewardExpr;
use super::{parse, DslError, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Task-alignment check: the reward must move strictly in `direction` when
/// only `feature` changes, on at least `min_fraction` of probe pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRule {
    pub feature: String,
    pub direction: Direction,
    pub min_fraction: f64,
    /// Perturbation applied to the feature: `step * max(1, |value|)`.
    pub step: f64,
}

impl AlignmentRule {
    /// Reward strictly decreasing in `energy` on 90% of pairs.
    pub fn energy_reduction() -> Self {
        AlignmentRule {
            feature: "energy".into(),
            direction: Direction::Decreasing,
            min_fraction: 0.9,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The text does not parse or references something outside the schema.
    Parse { error: DslError },
    /// No scalar for a probe state.
    NonScalar { probe: usize, error: DslError },
    Misaligned {
        feature: String,
        fraction: f64,
        required: f64,
    },
}

impl Violation {
    pub fn cause(&self) -> &'static str {
        match self {
            Violation::Parse { .. } => "format",
            Violation::NonScalar { .. } => "scalar",
            Violation::Misaligned { .. } => "alignment",
        }
    }
}

/// Parses and validates candidate text.
pub fn validate_source(
    source: &str,
    schema: &[String],
    probes: &SampleSet,
    rule: Option<&AlignmentRule>,
) -> Result<RewardExpr, Vec<Violation>> {
    let expr = parse(source, schema).map_err(|error| vec![Violation::Parse { error }])?;
    validate(&expr, schema, probes, rule)?;
    Ok(expr)
}

/// Checks resolution against `schema`, a finite scalar on every probe, and
/// the optional alignment rule. Violations are returned as data.
pub fn validate(
    expr: &RewardExpr,
    schema: &[String],
    probes: &SampleSet,
    rule: Option<&AlignmentRule>,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if let Some(name) = expr.features().into_iter().find(|f| !schema.iter().any(|s| s == f)) {
        violations.push(Violation::Parse {
            error: DslError::UnknownFeature {
                name: name.to_string(),
                position: 0,
            },
        });
        return Err(violations);
    }

    let bound = match expr.bind(&probes.names) {
        Ok(b) => b,
        Err(error) => {
            // probes lack a referenced column: no probe yields a scalar
            violations.push(Violation::NonScalar { probe: 0, error });
            return Err(violations);
        }
    };

    for (i, row) in probes.rows.iter().enumerate() {
        if let Err(error) = bound.evaluate(row) {
            violations.push(Violation::NonScalar { probe: i, error });
        }
    }

    if let Some(rule) = rule {
        let fraction = match probes.names.iter().position(|n| *n == rule.feature) {
            Some(col) if !probes.rows.is_empty() => {
                let aligned = probes
                    .rows
                    .iter()
                    .filter(|row| {
                        let mut moved = (*row).clone();
                        moved[col] += rule.step * row[col].abs().max(1.0);
                        match (bound.evaluate(row), bound.evaluate(&moved)) {
                            (Ok(a), Ok(b)) => match rule.direction {
                                Direction::Decreasing => b < a,
                                Direction::Increasing => b > a,
                            },
                            _ => false,
                        }
                    })
                    .count();
                aligned as f64 / probes.rows.len() as f64
            }
            _ => 0.0,
        };
        if fraction < rule.min_fraction {
            violations.push(Violation::Misaligned {
                feature: rule.feature.clone(),
                fraction,
                required: rule.min_fraction,
            });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
