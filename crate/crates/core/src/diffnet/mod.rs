//! Minimal differentiable-network engine.
//!
//! Tanh multilayer perceptrons with two complementary differentiation paths:
//!
//! - *input jets*: [`forward_jet`] propagates truncated Taylor data through
//!   the layers, producing the network value together with exact first and
//!   diagonal second derivatives with respect to selected inputs (the
//!   quantities a kinetic residual needs: ∂_t f, ∂_x f, ∂_v f, ∂_vv f);
//! - *parameter gradients*: [`Tape`] records every network evaluation a
//!   scalar loss is built from and differentiates the whole jet-augmented
//!   computation in reverse, yielding the exact gradient with respect to
//!   every weight and bias.
//!
//! All arithmetic is 64-bit and single-threaded with a fixed summation
//! order, so identical inputs give bit-identical outputs across runs.

mod batch;
mod jet;
mod net;
mod tape;

pub use jet::{forward_jet, DerivRequest, Jet, JetField};
pub use net::{
    forward, init_params, read_checkpoint, write_checkpoint, Activation, NetSpec, ParamVector,
    CHECKPOINT_FORMAT_VERSION,
};
pub use tape::{loss_gradient, loss_value, JetVars, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported derivative request: {0}")]
    UnsupportedRequest(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
