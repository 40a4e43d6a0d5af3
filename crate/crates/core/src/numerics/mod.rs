//! Dense `f64` tensors, a reverse-mode tape and the AdamW optimizer.

pub(crate) mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::AdamW;
pub use params::{ParamSet, ParamSnapshot, SnapshotEntry};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::{nll_ranking_loss, softmax, Tensor};

pub(crate) use params::hex;

#[cfg(test)]
mod tape_tests;
