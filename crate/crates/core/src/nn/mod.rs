//! Small dense networks with hand-written backpropagation, the Adam
//! optimizer and a ring replay buffer. Everything the agents need and
//! nothing more.

mod adam;
mod mlp;
mod replay;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, Backprop, Dense, ForwardTrace, Gradients, LayerGrad, Mlp};
pub use replay::ReplayBuffer;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("backward pass without a matching forward context: {0}")]
    MissingContext(String),
    #[error("non-finite gradient in {param}")]
    NonFinite { param: String },
    #[error("invalid network configuration: {0}")]
    Config(String),
}
