//! Dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! Everything learned in this crate runs on these pieces: a row-major `f64`
//! [`Tensor`](tensor::Tensor), a per-step Wengert [`Tape`](tape::Tape) whose
//! ops compute forward values and record what their backward pass needs,
//! AdamW with decoupled weight decay, cosine learning-rate scheduling, and
//! the `DTSR`/`CKPT` binary formats.

pub mod fdcheck;
pub mod init;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pool;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{clip_grad_norm, AdamW, CosineSchedule};
pub use params::ParamSet;
pub use rng::Rng;
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;
