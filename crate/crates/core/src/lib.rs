//! Cross-modal fusion of quantized time series and image tokens.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! * [`numkernel`] — dense `f64` tensors with reverse-mode autodiff, AdamW,
//!   learning-rate schedules, and the binary tensor/checkpoint formats.
//! * [`tsquant`] — deterministic (uniform/quantile) and learned (FSQ)
//!   tokenization of univariate series, plus the inverse mappings.
//! * [`imgquant`] — patch-based FSQ image tokenization with a small
//!   conditional denoising decoder.
//! * [`corrmodel`] — the cross-modal encoder–decoder trained on
//!   Dirichlet-sampled token mixes, with autoregressive generation.
//! * [`synthdata`] — a paired synthetic dataset with a known generative law
//!   so every learned component can be checked against ground truth.
//! * [`evalsuite`] — metrics, distribution comparison, the coordinate-swap
//!   counterfactual test with bootstrap confidence intervals, and
//!   per-modality gradient sensitivity.
//! * [`downstream`] — pooled regression over cross-modal embeddings
//!   (mean pooling and modality mean pooling) with a residual MLP head.

pub mod corrmodel;
pub mod downstream;
pub mod error;
pub mod evalsuite;
pub mod hexfloat;
pub mod imgquant;
pub mod numkernel;
pub mod synthdata;
pub mod tsquant;

pub use error::{Error, Result};
pub use numkernel::rng::Rng;
pub use numkernel::tensor::Tensor;
