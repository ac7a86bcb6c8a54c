//! Deterministic quantization: uniform and quantile binning.

use crate::error::{Error, Result};
use crate::tsquant::{SpecialTokens, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMethod {
    Uniform,
    Quantile,
}

impl BinMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BinMethod::Uniform => "uniform",
            BinMethod::Quantile => "quantile",
        }
    }
}

/// Fitted bin edges `t_0..t_T` (nondecreasing, `T + 1` values).
#[derive(Debug, Clone, PartialEq)]
pub struct BinBoundaries {
    pub method: BinMethod,
    pub edges: Vec<f64>,
}

impl BinBoundaries {
    /// Number of content tokens `T`.
    pub fn token_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn specials(&self) -> SpecialTokens {
        SpecialTokens::after(self.token_count())
    }

    /// Content tokens plus special ids.
    pub fn vocab_size(&self) -> usize {
        self.token_count() + SpecialTokens::COUNT
    }

    /// Midpoint of bin `j`.
    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.edges[j] + self.edges[j + 1])
    }
}

/// Fits bin boundaries to data.
///
/// Uniform edges are `x_min + (j/T)(x_max − x_min)`. Quantile edges are
/// lower empirical quantiles of the sorted data (`t_j = x_(⌈jn/T⌉)`), which
/// gives each token an equal share of the sample mass.
pub fn fit_bins(data: &[f64], method: BinMethod, t: usize) -> Result<BinBoundaries> {
    if data.is_empty() {
        return Err(Error::contract("fit_bins: empty data"));
    }
    if t == 0 {
        return Err(Error::contract("fit_bins: need at least one token"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("fit_bins: data contains non-finite values"));
    }
    let x_min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let edges = match method {
        BinMethod::Uniform => {
            let span = x_max - x_min;
            let mut edges: Vec<f64> =
                (0..=t).map(|j| x_min + span * (j as f64 / t as f64)).collect();
            edges[0] = x_min;
            edges[t] = x_max;
            edges
        }
        BinMethod::Quantile => {
            if x_min == x_max {
                return Err(Error::DegenerateBins);
            }
            let mut sorted = data.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let mut edges = Vec::with_capacity(t + 1);
            edges.push(sorted[0]);
            for j in 1..t {
                let rank = (j * n).div_ceil(t); // ⌈jn/T⌉, 1-based
                edges.push(sorted[rank - 1]);
            }
            edges.push(sorted[n - 1]);
            edges
        }
    };
    debug_assert!(edges.windows(2).all(|w| w[0] <= w[1]));
    Ok(BinBoundaries { method, edges })
}

fn token_of(bins: &BinBoundaries, x: f64) -> u32 {
    let t = bins.token_count();
    // Largest j with edges[j] <= x, clamped into the content range; values
    // outside [x_min, x_max] clamp to the extreme bins so the map is total.
    let idx = bins.edges.partition_point(|&e| e <= x);
    idx.saturating_sub(1).min(t - 1) as u32
}

/// Maps each value to its half-open bin `[t_j, t_{j+1})`; NaN becomes NULL.
pub fn tokenize_binned(series: &[f64], bins: &BinBoundaries) -> TokenSequence {
    tokenize_impl(series, bins, false)
}

/// Like [`tokenize_binned`], but exact zeros become the ZERO special token
/// (for sparse, precipitation-like variables).
pub fn tokenize_binned_sparse(series: &[f64], bins: &BinBoundaries) -> TokenSequence {
    tokenize_impl(series, bins, true)
}

fn tokenize_impl(series: &[f64], bins: &BinBoundaries, sparse_zero: bool) -> TokenSequence {
    let sp = bins.specials();
    let tokens = series
        .iter()
        .map(|&x| {
            if x.is_nan() {
                sp.null
            } else if sparse_zero && x == 0.0 {
                sp.zero
            } else {
                token_of(bins, x)
            }
        })
        .collect();
    TokenSequence { tokens, modality: String::new(), vocab_size: bins.vocab_size() }
}

/// Inverts binned tokenization: token `j` maps to its bin midpoint, NULL and
/// PAD to NaN, ZERO to 0.0; EOS truncates the output.
pub fn detokenize_binned(tokens: &[u32], bins: &BinBoundaries) -> Result<Vec<f64>> {
    let t = bins.token_count();
    let sp = bins.specials();
    let mut out = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        if tok == sp.eos {
            break;
        }
        let v = if tok == sp.null || tok == sp.pad {
            f64::NAN
        } else if tok == sp.zero {
            0.0
        } else if (tok as usize) < t {
            bins.midpoint(tok as usize)
        } else {
            return Err(Error::InvalidToken { token: tok, vocab: bins.vocab_size() });
        };
        out.push(v);
    }
    Ok(out)
}

/// Distinct-token count and per-token frequency over a corpus.
pub fn codebook_utilization<'a>(
    corpora: impl IntoIterator<Item = &'a [u32]>,
    vocab_size: usize,
) -> (usize, Vec<u64>) {
    let mut hist = vec![0u64; vocab_size];
    for seq in corpora {
        for &t in seq {
            hist[t as usize] += 1;
        }
    }
    let used = hist.iter().filter(|&&c| c > 0).count();
    (used, hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::rng::Rng;

    #[test]
    fn uniform_edges_formula() {
        let data: Vec<f64> = (0..=10).map(|v| v as f64).collect();
        let bins = fit_bins(&data, BinMethod::Uniform, 5).unwrap();
        assert_eq!(bins.edges, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn quantile_edges_lower_empirical() {
        let data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let bins = fit_bins(&data, BinMethod::Quantile, 4).unwrap();
        assert_eq!(bins.edges, vec![1.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn quantile_constant_data_degenerate() {
        let err = fit_bins(&[5.0, 5.0, 5.0], BinMethod::Quantile, 4).unwrap_err();
        assert!(matches!(err, Error::DegenerateBins));
        // uniform stays total on constant data
        assert!(fit_bins(&[5.0, 5.0, 5.0], BinMethod::Uniform, 4).is_ok());
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        assert!(fit_bins(&[], BinMethod::Uniform, 4).is_err());
        assert!(fit_bins(&[1.0, f64::NAN], BinMethod::Uniform, 4).is_err());
        assert!(fit_bins(&[1.0, 2.0], BinMethod::Uniform, 0).is_err());
    }

    #[test]
    fn tokenize_examples() {
        let data: Vec<f64> = (0..=10).map(|v| v as f64).collect();
        let bins = fit_bins(&data, BinMethod::Uniform, 5).unwrap();
        let seq = tokenize_binned(&[3.2, 0.0, 10.0, -1.0, 11.0, f64::NAN], &bins);
        let sp = bins.specials();
        assert_eq!(seq.tokens, vec![1, 0, 4, 0, 4, sp.null]);
    }

    #[test]
    fn detokenize_midpoints_and_specials() {
        let data: Vec<f64> = (0..=10).map(|v| v as f64).collect();
        let bins = fit_bins(&data, BinMethod::Uniform, 5).unwrap();
        let sp = bins.specials();
        let out = detokenize_binned(&[1, sp.null, sp.zero], &bins).unwrap();
        assert_eq!(out[0], 3.0);
        assert!(out[1].is_nan());
        assert_eq!(out[2], 0.0);
        // EOS truncates
        let out = detokenize_binned(&[1, sp.eos, 2], &bins).unwrap();
        assert_eq!(out.len(), 1);
        // invalid token
        assert!(detokenize_binned(&[sp.zero + 1], &bins).is_err());
    }

    #[test]
    fn roundtrip_error_bounded_by_half_bin() {
        let mut rng = Rng::seed_from(7);
        let data: Vec<f64> = (0..2000).map(|_| rng.uniform_in(-3.0, 9.0)).collect();
        for method in [BinMethod::Uniform, BinMethod::Quantile] {
            let bins = fit_bins(&data, method, 37).unwrap();
            for &x in &data {
                let tok = tokenize_binned(&[x], &bins).tokens[0] as usize;
                let back = detokenize_binned(&[tok as u32], &bins).unwrap()[0];
                let half_width = (bins.edges[tok + 1] - bins.edges[tok]) / 2.0;
                assert!((x - back).abs() <= half_width + 1e-12, "{method:?} x={x} tok={tok}");
            }
        }
    }

    #[test]
    fn tokenization_monotone_in_value() {
        let mut rng = Rng::seed_from(8);
        let data: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        for method in [BinMethod::Uniform, BinMethod::Quantile] {
            let bins = fit_bins(&data, method, 11).unwrap();
            let mut probe: Vec<f64> = (0..200).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
            probe.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let toks = tokenize_binned(&probe, &bins).tokens;
            assert!(toks.windows(2).all(|w| w[0] <= w[1]), "{method:?}");
        }
    }

    #[test]
    fn quantile_balance_on_iid_data() {
        let mut rng = Rng::seed_from(9);
        let t = 40;
        let data: Vec<f64> = (0..100 * t).map(|_| rng.normal()).collect();
        let bins = fit_bins(&data, BinMethod::Quantile, t).unwrap();
        let seq = tokenize_binned(&data, &bins);
        let (_, hist) = codebook_utilization([seq.tokens.as_slice()], bins.vocab_size());
        let content = &hist[..t];
        let max = *content.iter().max().unwrap() as f64;
        let min = *content.iter().min().unwrap() as f64;
        assert!(min > 0.0 && max / min <= 1.2, "max {max} min {min}");
    }

    #[test]
    fn sparse_zero_pathway() {
        let bins = fit_bins(&[0.0, 1.0, 2.0, 3.0], BinMethod::Uniform, 4).unwrap();
        let seq = tokenize_binned_sparse(&[0.0, 1.5, 0.0], &bins);
        let sp = bins.specials();
        assert_eq!(seq.tokens[0], sp.zero);
        assert_eq!(seq.tokens[2], sp.zero);
        let back = detokenize_binned(&seq.tokens, &bins).unwrap();
        assert_eq!(back[0], 0.0);
    }

    #[test]
    fn utilization_single_token() {
        let (used, hist) = codebook_utilization([vec![3u32; 10].as_slice()], 8);
        assert_eq!(used, 1);
        assert_eq!(hist[3], 10);
    }
}
