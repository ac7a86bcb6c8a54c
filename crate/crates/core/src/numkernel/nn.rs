//! Composed network pieces built from tape primitives: scaled dot-product
//! attention with optional masks, multi-head attention, and the SwiGLU
//! feed-forward block (no bias terms).

use crate::error::Result;
use crate::numkernel::rng::Rng;
use crate::numkernel::tape::Tape;
use crate::numkernel::tensor::Tensor;

/// Additive mask value for disallowed attention edges.
pub const MASK_OFF: f64 = -1e30;

/// Lower-triangular causal mask of shape `[n, n]` (0 allowed, −inf-ish off).
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASK_OFF;
        }
    }
    Tensor::new(vec![n, n], data).expect("mask shape")
}

/// Scaled dot-product attention. `q: [n, hd]`, `k, v: [m, hd]`, optional
/// additive mask `[n, m]`.
pub fn sdpa(tape: &mut Tape, q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let hd = q.shape()[1];
    let kt = tape.transpose2d(k)?;
    let mut scores = tape.matmul(q, &kt)?;
    scores = tape.scale(&scores, 1.0 / (hd as f64).sqrt())?;
    if let Some(m) = mask {
        scores = tape.add(&scores, m)?;
    }
    let probs = tape.softmax_last(&scores)?;
    tape.matmul(&probs, v)
}

/// Projection weights of one attention block, `[d, d]` each.
pub struct AttnRefs<'a> {
    pub wq: &'a Tensor,
    pub wk: &'a Tensor,
    pub wv: &'a Tensor,
    pub wo: &'a Tensor,
}

/// Multi-head attention over row-major token matrices. Queries come from
/// `x_q: [n, d]`, keys/values from `x_kv: [m, d]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: &Tensor,
    x_kv: &Tensor,
    w: &AttnRefs,
    heads: usize,
    mask: Option<&Tensor>,
    attn_dropout: f64,
    rng: Option<&mut Rng>,
) -> Result<Tensor> {
    let d = x_q.shape()[1];
    debug_assert_eq!(d % heads, 0);
    let hd = d / heads;
    let q = tape.matmul(x_q, w.wq)?;
    let k = tape.matmul(x_kv, w.wk)?;
    let v = tape.matmul(x_kv, w.wv)?;
    let mut rng = rng;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(&q, h * hd, hd)?;
        let kh = tape.slice_cols(&k, h * hd, hd)?;
        let vh = tape.slice_cols(&v, h * hd, hd)?;
        let kt = tape.transpose2d(&kh)?;
        let mut scores = tape.matmul(&qh, &kt)?;
        scores = tape.scale(&scores, 1.0 / (hd as f64).sqrt())?;
        if let Some(m) = mask {
            scores = tape.add(&scores, m)?;
        }
        let mut probs = tape.softmax_last(&scores)?;
        if attn_dropout > 0.0 {
            let r = rng.as_deref_mut().expect("attention dropout needs an rng");
            probs = tape.dropout(&probs, attn_dropout, r)?;
        }
        outs.push(tape.matmul(&probs, &vh)?);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let merged = tape.concat_cols(&refs)?;
    tape.matmul(&merged, w.wo)
}

/// SwiGLU feed-forward: `W_down( silu(x W_gate) ⊙ (x W_up) )`, bias-free.
pub fn swiglu_ffn(
    tape: &mut Tape,
    x: &Tensor,
    w_gate: &Tensor,
    w_up: &Tensor,
    w_down: &Tensor,
) -> Result<Tensor> {
    let gate = tape.matmul(x, w_gate)?;
    let gate = tape.silu(&gate)?;
    let up = tape.matmul(x, w_up)?;
    let prod = tape.mul(&gate, &up)?;
    tape.matmul(&prod, w_down)
}

/// Mean squared error between a prediction and a constant target.
pub fn mse(tape: &mut Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(&diff, &diff)?;
    tape.mean_all(&sq)
}
