//! Minimal reverse-mode automatic differentiation over dense `f64` arrays,
//! plus the Adam optimizer and the cosine learning-rate schedule.
//!
//! Everything is 64-bit and single-threaded by design: a graph and its
//! tensors are confined to one thread of execution, which keeps the desk
//! scale deterministic to the bit. Parameters live in a [`ParamStore`];
//! [`backward`] accumulates gradients into the store (summing until the
//! caller zeroes them), and the graph is released when the tensors drop.

mod optim;
pub mod ops;
mod tensor;

pub use optim::{adam_step, cosine_lr, AdamState};
pub use tensor::{backward, DiffError, ParamId, ParamStore, Tensor};
