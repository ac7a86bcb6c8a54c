//! Time-series tokenization: deterministic uniform/quantile binning and a
//! learned FSQ encoder–decoder, each with its inverse mapping.

pub mod bins;
pub mod conv_ae;
pub mod files;
pub mod fsq;

pub use bins::{codebook_utilization, detokenize_binned, fit_bins, tokenize_binned, tokenize_binned_sparse, BinBoundaries, BinMethod};
pub use conv_ae::{FsqTsConfig, FsqTsTokenizer, NormStats, TrainCfg};
pub use fsq::{fsq_forward, fsq_indices, fsq_token_decode, fsq_token_encode, FsqConfig};

/// Reserved token ids appended after the content vocabulary, in the fixed
/// order PAD, EOS, NULL, ZERO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: u32,
    pub eos: u32,
    pub null: u32,
    pub zero: u32,
}

impl SpecialTokens {
    pub const COUNT: usize = 4;

    /// Special ids for a content vocabulary of size `m`.
    pub fn after(m: usize) -> Self {
        let m = m as u32;
        SpecialTokens { pad: m, eos: m + 1, null: m + 2, zero: m + 3 }
    }

    pub fn contains(&self, token: u32) -> bool {
        token >= self.pad && token <= self.zero
    }
}

/// Ordered discrete tokens with a modality tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub modality: String,
    /// Content vocabulary plus the four special ids.
    pub vocab_size: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, modality: impl Into<String>, vocab_size: usize) -> crate::Result<Self> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(crate::Error::InvalidToken { token: t, vocab: vocab_size });
        }
        Ok(TokenSequence { tokens, modality: modality.into(), vocab_size })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_token_layout() {
        let s = SpecialTokens::after(500);
        assert_eq!((s.pad, s.eos, s.null, s.zero), (500, 501, 502, 503));
        assert!(s.contains(501));
        assert!(!s.contains(499));
    }

    #[test]
    fn token_sequence_validates_vocab() {
        assert!(TokenSequence::new(vec![0, 3], "m", 4).is_ok());
        assert!(TokenSequence::new(vec![0, 4], "m", 4).is_err());
    }
}
