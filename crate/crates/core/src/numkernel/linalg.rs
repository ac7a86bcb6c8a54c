//! Raw row-major kernels shared by the tape ops and the cached inference
//! path. No tape, no allocation policy — plain slices in, values out.

/// `out = a (m×k) @ b (k×n)`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    matmul_acc(a, b, m, k, n, out);
}

/// `out += a @ b`; the accumulate form all backward passes reduce to.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ (k×m viewed as m×k input) @ b (m×n)`, i.e. a is m×k row-major.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a (m×k) @ bᵀ (b is n×k row-major)`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            orow[j] += acc;
        }
    }
}

pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// LayerNorm of one row: `y = (x - mean) / sqrt(var + eps) * gamma + beta`.
/// Returns `(x_hat, rstd)` when the caller needs them for backward.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    rstd
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut out = vec![0.0; 9];
        matmul(&eye, &a, 3, 3, 3, &mut out);
        assert_eq!(out, a);
    }

    #[test]
    fn transpose_variants_agree() {
        // a: 2x3, b: 3x4 random-ish
        let a: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut direct = vec![0.0; 8];
        matmul(&a, &b, 2, 3, 4, &mut direct);

        let bt = transpose(&b, 3, 4);
        let mut via_bt = vec![0.0; 8];
        matmul_a_bt_acc(&a, &bt, 2, 3, 4, &mut via_bt);
        for (x, y) in direct.iter().zip(&via_bt) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = transpose(&a, 2, 3);
        let mut via_at = vec![0.0; 8];
        matmul_at_b_acc(&at, &b, 3, 2, 4, &mut via_at);
        for (x, y) in direct.iter().zip(&via_at) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = vec![0.0, 0.0, 0.0];
        softmax_row(&mut row);
        assert_eq!(row, vec![1.0 / 3.0; 3]);
    }
}
