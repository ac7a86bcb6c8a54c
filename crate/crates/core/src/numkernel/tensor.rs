//! Dense row-major `f64` tensor.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Stable identity for trainable leaf tensors, used by the tape to route
/// gradients back to parameters across ops.
pub type ParamId = u64;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Dense n-dimensional array of `f64`, row-major.
///
/// Parameters carry `requires_grad` and a stable [`ParamId`]; tensors
/// produced by tape ops carry the tape node that computed them.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    param_id: Option<ParamId>,
    pub(crate) node: Option<usize>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} does not hold {} elements", shape, data.len()),
            ));
        }
        Ok(Tensor { shape, data, requires_grad: false, param_id: None, node: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            param_id: None,
            node: None,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, param_id: None, node: None }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false, param_id: None, node: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Marks this tensor as a trainable parameter with a fresh identity.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self.param_id = Some(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed));
        self.node = None;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn param_id(&self) -> Option<ParamId> {
        self.param_id
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows × cols view of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape("dims2", format!("expected rank 2, got {s:?}"))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the flattened data.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn with_node(mut self, node: usize) -> Self {
        self.node = Some(node);
        self
    }

    /// Same data viewed under a new shape; drops tape membership, so only
    /// use off-tape (the tape has its own reshape op).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariant() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn param_ids_unique() {
        let a = Tensor::zeros(&[1]).into_param();
        let b = Tensor::zeros(&[1]).into_param();
        assert_ne!(a.param_id(), b.param_id());
    }
}
