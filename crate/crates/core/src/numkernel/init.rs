//! Weight initialization: truncated normal (±2σ) with std 0.02, zero biases.

use crate::numkernel::rng::Rng;
use crate::numkernel::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.trunc_normal(std));
    t
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

pub fn ones(shape: &[usize]) -> Tensor {
    Tensor::full(shape, 1.0)
}
