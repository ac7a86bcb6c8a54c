//! Finite scalar quantization: per-dimension rounding of a bounded latent
//! to uniformly spaced levels in [−1, 1], with a mixed-radix bijection
//! between index tuples and single tokens.

use crate::error::{Error, Result};
use crate::numkernel::tape::Tape;
use crate::numkernel::tensor::Tensor;

/// Quantization levels per latent dimension; codebook size is their product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsqConfig {
    levels: Vec<u32>,
}

impl FsqConfig {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&l| l < 2) {
            return Err(Error::contract(format!("FSQ levels must each be >= 2, got {levels:?}")));
        }
        let mut m: u64 = 1;
        for &l in &levels {
            m = m.checked_mul(l as u64).filter(|&m| m <= u32::MAX as u64).ok_or_else(|| {
                Error::contract(format!("FSQ codebook {levels:?} exceeds the u32 token range"))
            })?;
        }
        Ok(FsqConfig { levels })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Latent dimension `D`.
    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// Codebook size `M = Π L_d`.
    pub fn codebook_size(&self) -> usize {
        self.levels.iter().map(|&l| l as usize).product()
    }

    /// Quantization point `c_{d,j} = −1 + 2j/(L_d − 1)`.
    pub fn level_value(&self, d: usize, j: u32) -> f64 {
        -1.0 + 2.0 * j as f64 / (self.levels[d] - 1) as f64
    }
}

/// Index of the nearest level among `l` uniformly spaced points in [−1, 1];
/// exact ties break toward the lower index.
pub fn nearest_level(z: f64, l: u32) -> u32 {
    // The argmin over uniform levels is round((z+1)(L−1)/2) with half-down
    // rounding, which realizes the lower-index tie rule in closed form.
    let u = (z + 1.0) * (l - 1) as f64 / 2.0;
    let idx = (u - 0.5).ceil();
    (idx.max(0.0) as u32).min(l - 1)
}

/// Per-dimension nearest-level indices of a latent vector.
pub fn fsq_indices(z: &[f64], cfg: &FsqConfig) -> Result<Vec<u32>> {
    if z.len() != cfg.dim() {
        return Err(Error::shape("fsq_indices", format!("latent dim {} vs config {}", z.len(), cfg.dim())));
    }
    Ok(z.iter().zip(cfg.levels()).map(|(&zd, &l)| nearest_level(zd, l)).collect())
}

/// Mixed-radix encoding `τ = Σ_d i_d · Π_{m>d} L_m`.
pub fn fsq_token_encode(indices: &[u32], cfg: &FsqConfig) -> Result<u32> {
    if indices.len() != cfg.dim() {
        return Err(Error::contract(format!("{} indices for dim {}", indices.len(), cfg.dim())));
    }
    let mut token: u64 = 0;
    for (&i, &l) in indices.iter().zip(cfg.levels()) {
        if i >= l {
            return Err(Error::contract(format!("index {i} out of range for level count {l}")));
        }
        token = token * l as u64 + i as u64;
    }
    Ok(token as u32)
}

/// Inverse of [`fsq_token_encode`]; also returns the level values.
pub fn fsq_token_decode(token: u32, cfg: &FsqConfig) -> Result<(Vec<u32>, Vec<f64>)> {
    if token as usize >= cfg.codebook_size() {
        return Err(Error::InvalidToken { token, vocab: cfg.codebook_size() });
    }
    let d = cfg.dim();
    let mut indices = vec![0u32; d];
    let mut rest = token as u64;
    for di in (0..d).rev() {
        let l = cfg.levels()[di] as u64;
        indices[di] = (rest % l) as u32;
        rest /= l;
    }
    let values = indices.iter().enumerate().map(|(di, &i)| cfg.level_value(di, i)).collect();
    Ok((indices, values))
}

/// Quantizes a latent matrix `[n, D]` row by row. The returned tensor
/// carries straight-through gradients (identity) back to `z_e`; tokens are
/// the mixed-radix encodings of the per-row index tuples.
pub fn fsq_forward(tape: &mut Tape, z_e: &Tensor, cfg: &FsqConfig) -> Result<(Tensor, Vec<u32>)> {
    let (n, d) = z_e.dims2()?;
    if d != cfg.dim() {
        return Err(Error::shape("fsq_forward", format!("latent dim {d} vs config {}", cfg.dim())));
    }
    let mut q = vec![0.0; n * d];
    let mut tokens = Vec::with_capacity(n);
    for r in 0..n {
        let row = &z_e.data()[r * d..(r + 1) * d];
        let idx = fsq_indices(row, cfg)?;
        for (c, &i) in idx.iter().enumerate() {
            q[r * d + c] = cfg.level_value(c, i);
        }
        tokens.push(fsq_token_encode(&idx, cfg)?);
    }
    let z_q = tape.straight_through(z_e, q)?;
    Ok((z_q, tokens))
}
