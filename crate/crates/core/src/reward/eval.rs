use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{BinaryOp, Expr, Function, RewardExpr};
use super::{parse, DslError};

/// Expression compiled against a fixed column layout: feature references
/// become slot indices so evaluation is a tree walk over a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Call(Function, Vec<Node>),
}

fn non_finite(detail: impl Into<String>) -> DslError {
    DslError::NonFinite(detail.into())
}

fn finite(v: f64, what: &str) -> Result<f64, DslError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(non_finite(format!("{what} overflowed")))
    }
}

impl Node {
    fn eval(&self, values: &[f64]) -> Result<f64, DslError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Slot(i) => {
                let v = values[*i];
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(non_finite(format!("input value {v} is not finite")))
                }
            }
            Node::Neg(e) => Ok(-e.eval(values)?),
            Node::Binary(op, l, r) => {
                let a = l.eval(values)?;
                let b = r.eval(values)?;
                match op {
                    BinaryOp::Add => finite(a + b, "addition"),
                    BinaryOp::Sub => finite(a - b, "subtraction"),
                    BinaryOp::Mul => finite(a * b, "multiplication"),
                    BinaryOp::Div => {
                        if b == 0.0 {
                            Err(non_finite("division by zero"))
                        } else {
                            finite(a / b, "division")
                        }
                    }
                }
            }
            Node::Call(f, args) => {
                let x = args[0].eval(values)?;
                match f {
                    Function::Min | Function::Max => {
                        let mut acc = x;
                        for a in &args[1..] {
                            let v = a.eval(values)?;
                            acc = if *f == Function::Min { acc.min(v) } else { acc.max(v) };
                        }
                        Ok(acc)
                    }
                    Function::Abs => Ok(x.abs()),
                    Function::Clip => {
                        let lo = args[1].eval(values)?;
                        let hi = args[2].eval(values)?;
                        if lo > hi {
                            return Err(non_finite(format!("clip bounds inverted ({lo} > {hi})")));
                        }
                        Ok(x.clamp(lo, hi))
                    }
                    Function::Exp => finite(x.exp(), "exp"),
                    Function::Log => {
                        if x <= 0.0 {
                            Err(non_finite(format!("log of non-positive value {x}")))
                        } else {
                            Ok(x.ln())
                        }
                    }
                    Function::Sqrt => {
                        if x < 0.0 {
                            Err(non_finite(format!("sqrt of negative value {x}")))
                        } else {
                            Ok(x.sqrt())
                        }
                    }
                    Function::Tanh => Ok(x.tanh()),
                }
            }
        }
    }
}

fn compile(
    e: &Expr,
    slot: &dyn Fn(&str) -> Option<Result<Node, DslError>>,
) -> Result<Node, DslError> {
    Ok(match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Feature(n) => slot(n).unwrap_or_else(|| Err(DslError::MissingBinding(n.clone())))?,
        Expr::Neg(x) => Node::Neg(Box::new(compile(x, slot)?)),
        Expr::Binary { op, lhs, rhs } => Node::Binary(
            *op,
            Box::new(compile(lhs, slot)?),
            Box::new(compile(rhs, slot)?),
        ),
        Expr::Call { func, args } => Node::Call(
            *func,
            args.iter().map(|a| compile(a, slot)).collect::<Result<_, _>>()?,
        ),
    })
}

impl BoundExpr {
    pub fn evaluate(&self, values: &[f64]) -> Result<f64, DslError> {
        self.root.eval(values)
    }
}

impl RewardExpr {
    /// Compiles against `names`; `values` passed to [`BoundExpr::evaluate`]
    /// must follow the same order.
    pub fn bind(&self, names: &[String]) -> Result<BoundExpr, DslError> {
        let root = compile(&self.root, &|n| {
            names.iter().position(|x| x == n).map(|i| Ok(Node::Slot(i)))
        })?;
        Ok(BoundExpr { root })
    }

    pub fn evaluate(&self, bindings: &BTreeMap<String, f64>) -> Result<f64, DslError> {
        let root = compile(&self.root, &|n| bindings.get(n).map(|v| Ok(Node::Const(*v))))?;
        root.eval(&[])
    }
}

/// A reward expression plus named constants (weights) folded in at bind
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction {
    pub expr: RewardExpr,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

/// A [`RewardFunction`] compiled against an environment's feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReward(BoundExpr);

impl RewardFunction {
    /// Parses `source` against the union of `features` and the constant names.
    pub fn parse(
        source: &str,
        features: &[String],
        constants: BTreeMap<String, f64>,
    ) -> Result<Self, DslError> {
        let mut schema = features.to_vec();
        schema.extend(constants.keys().cloned());
        let expr = parse(source, &schema)?;
        Ok(RewardFunction { expr, constants })
    }

    /// Constants take precedence over same-named features.
    pub fn bind(&self, features: &[String]) -> Result<BoundReward, DslError> {
        let root = compile(&self.expr.root, &|n| {
            if let Some(c) = self.constants.get(n) {
                return Some(Ok(Node::Const(*c)));
            }
            features.iter().position(|x| x == n).map(|i| Ok(Node::Slot(i)))
        })?;
        Ok(BoundReward(BoundExpr { root }))
    }

    pub fn evaluate(&self, features: &BTreeMap<String, f64>) -> Result<f64, DslError> {
        let mut all = features.clone();
        all.extend(self.constants.iter().map(|(k, v)| (k.clone(), *v)));
        self.expr.evaluate(&all)
    }
}

impl BoundReward {
    pub fn evaluate(&self, features: &[f64]) -> Result<f64, DslError> {
        self.0.evaluate(features)
    }
}
