//! AdamW with decoupled weight decay, global gradient clipping, and the
//! warmup + cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::numkernel::params::ParamSet;
use crate::numkernel::tensor::Tensor;

/// AdamW optimizer state; moments are laid out per parameter index.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay update. Returns `true` when the update was
    /// skipped because a gradient was non-finite (params stay untouched and
    /// the step counter does not advance).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<bool> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!("{} grads for {} params", grads.len(), params.len())));
        }
        for (g, p) in grads.iter().zip(params.tensors()) {
            if g.shape() != p.shape() {
                return Err(Error::shape("adamw_step", format!("grad {:?} vs param {:?}", g.shape(), p.shape())));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(true);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, g) in grads.iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = params.at_mut(idx).data_mut();
            for ((pv, gv), (mv, vv)) in p.iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pv);
            }
        }
        Ok(false)
    }
}

/// Scales all gradients in place so the global L2 norm is at most
/// `max_norm`; returns the pre-clip norm. Idempotent.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Linear warmup to `base_lr`, then half-cosine decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        assert!(warmup_steps <= total_steps);
        CosineSchedule { base_lr, warmup_steps, total_steps }
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::contract(format!("step {step} beyond total {}", self.total_steps)));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        if span == 0.0 {
            return Ok(if step == self.total_steps { 0.0 } else { self.base_lr });
        }
        let progress = (step - self.warmup_steps) as f64 / span;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}
