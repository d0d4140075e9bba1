//! A small, sandboxed expression language for reward functions.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | primary
//! primary := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! Identifiers resolve against a declared feature schema. Built-in functions
//! are `min`, `max` (two or more arguments), `abs`, `exp`, `log`, `sqrt`,
//! `tanh` and `clip(x, lo, hi)`. Evaluation never produces NaN or infinity:
//! division by zero, `log` of a non-positive value, `sqrt` of a negative value
//! and overflow are reported as errors.

mod ast;
mod eval;
mod lipschitz;
mod parse;
mod validate;

pub use ast::{BinaryOp, Expr, Function, RewardExpr, MAX_DEPTH};
pub use eval::{BoundExpr, BoundReward, RewardFunction};
pub use lipschitz::{estimate_lipschitz, LipschitzEstimate, DEFAULT_MIN_DISTANCE};
pub use parse::parse;
pub use validate::{validate, validate_source, AlignmentRule, Direction, Violation};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum DslError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown feature `{name}` at position {position}")]
    UnknownFeature { name: String, position: usize },
    #[error("unknown function `{name}` at position {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("{function} expects {expected} argument(s), got {found} (position {position})")]
    Arity {
        function: String,
        expected: String,
        found: usize,
        position: usize,
    },
    #[error("expression nesting exceeds the limit of {limit}")]
    DepthExceeded { limit: usize },
    #[error("no binding for feature `{0}`")]
    MissingBinding(String),
    #[error("non-finite result: {0}")]
    NonFinite(String),
    #[error("lipschitz estimation failed: {0}")]
    Estimation(String),
}

/// A table of feature vectors sharing one column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, DslError> {
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(DslError::Estimation(format!(
                "sample row has {} values for {} columns",
                r.len(),
                names.len()
            )));
        }
        Ok(SampleSet { names, rows })
    }

    /// Builds a table from name/value maps; every map must carry `names`.
    pub fn from_maps(names: &[String], maps: &[BTreeMap<String, f64>]) -> Result<Self, DslError> {
        let rows = maps
            .iter()
            .map(|m| {
                names
                    .iter()
                    .map(|n| m.get(n).copied().ok_or_else(|| DslError::MissingBinding(n.clone())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SampleSet {
            names: names.to_vec(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_map(&self, i: usize) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(self.rows[i].iter().copied()).collect()
    }

    /// Appends constant columns (reward weights and similar) to every row.
    pub fn with_constants(&self, constants: &BTreeMap<String, f64>) -> SampleSet {
        let mut out = self.clone();
        for (k, v) in constants {
            if !out.names.contains(k) {
                out.names.push(k.clone());
                out.rows.iter_mut().for_each(|r| r.push(*v));
            }
        }
        out
    }
}
