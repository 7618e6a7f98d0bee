//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Forward operations are methods on [`Tape`]; each appends a node holding
//! its output and whatever the backward pass needs. [`Tape::backward`] walks
//! the nodes once in reverse and accumulates gradients into every node that
//! requires one.

mod adam;
pub(crate) mod kernels;
mod tape;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use tape::{
    sigmoid, Mode, RunningStats, Tape, Var, BCE_CLAMP, BN_EPSILON, BN_MOMENTUM, LEAKY_SLOPE,
};
