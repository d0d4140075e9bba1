//! Reinforcement learning with language-model reward design and guidance.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod agents;
pub mod exec;
pub mod harness;
pub mod llm;
pub mod mdp;
pub mod nn;
pub mod reward;
pub mod roles;
