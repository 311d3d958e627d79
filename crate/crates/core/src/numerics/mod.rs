//! Dense arrays, a reverse-mode tape, Transformer building blocks and the
//! AdamW optimizer.

mod array;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod params;
mod tape;

pub use array::Array;
pub use nn::{AttentionBlock, FeedForward, ForwardCtx, LayerNorm, Linear, Mlp};
pub use optim::{clip_global_norm, cosine_lr, AdamW, AdamWConfig};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("attention needs at least one key per query")]
    EmptyKeys,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("{0}")]
    InvalidArgument(String),
}
