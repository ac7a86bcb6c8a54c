//! Non-overlapping patch extraction and its inverse.

use crate::error::{Error, Result};
use crate::numkernel::tensor::Tensor;

/// Splits `[h, w, c]` into `h/p · w/p` row-major patches, each flattened to
/// `p·p·c` values in (row, col, channel) order.
pub fn patchify(image: &Tensor, p: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("patchify", format!("expected [h, w, c], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape("patchify", format!("image {h}x{w} not divisible by patch {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let mut data = Vec::with_capacity(h * w * c);
    for py in 0..gh {
        for px in 0..gw {
            for iy in 0..p {
                let row = py * p + iy;
                let start = (row * w + px * p) * c;
                data.extend_from_slice(&image.data()[start..start + p * c]);
            }
        }
    }
    Tensor::new(vec![gh * gw, p * p * c], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, p: usize, h: usize, w: usize, c: usize) -> Result<Tensor> {
    let (n, flat) = patches.dims2()?;
    let (gh, gw) = (h / p, w / p);
    if n != gh * gw || flat != p * p * c {
        return Err(Error::shape("unpatchify", format!("{n} patches of {flat} vs {h}x{w}x{c} P={p}")));
    }
    let mut data = vec![0.0; h * w * c];
    for py in 0..gh {
        for px in 0..gw {
            let patch = &patches.data()[(py * gw + px) * flat..(py * gw + px + 1) * flat];
            for iy in 0..p {
                let row = py * p + iy;
                let start = (row * w + px * p) * c;
                data[start..start + p * c].copy_from_slice(&patch[iy * p * c..(iy + 1) * p * c]);
            }
        }
    }
    Tensor::new(vec![h, w, c], data)
}
