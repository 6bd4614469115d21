//! Minimal reverse-mode differentiation, dense layers and Adam.
//!
//! Every trainable component of the crate is built from these pieces: a
//! [`Graph`] is recorded per forward pass, [`Param`]s bind into it as tracked
//! or constant leaves, and [`Adam`] applies the resulting [`Gradients`].

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod mlp;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::finite_diff_check;
pub use graph::{Graph, Var};
pub use mlp::{Activation, Linear, Mlp};
pub use param::{params_fingerprint, Gradients, Param, ParamId};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("graph already differentiated; run a new forward pass")]
    GraphConsumed,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
