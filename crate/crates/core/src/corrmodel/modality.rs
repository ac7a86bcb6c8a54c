//! Modality descriptions, Dirichlet-sampled token budgets, and the
//! input/target token sampler.

use crate::error::{Error, Result};
use crate::numkernel::rng::Rng;
use crate::tsquant::SpecialTokens;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PosKind {
    /// 1-D sequence with positions `0..max_len`.
    Seq { max_len: usize },
    /// 2-D grid with row-major positions `0..h*w`.
    Grid { h: usize, w: usize },
}

impl PosKind {
    pub fn max_positions(&self) -> usize {
        match self {
            PosKind::Seq { max_len } => *max_len,
            PosKind::Grid { h, w } => h * w,
        }
    }

    pub fn is_seq(&self) -> bool {
        matches!(self, PosKind::Seq { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    InputOnly,
    InputTarget,
}

#[derive(Debug, Clone)]
pub struct ModalitySpec {
    pub name: String,
    /// Embedding rows: content vocabulary plus the four special ids.
    pub vocab: usize,
    pub pos: PosKind,
    pub role: Role,
    pub alpha_in: f64,
    pub alpha_tgt: f64,
    pub max_tokens: usize,
    /// Deterministic-binned vocabularies are ordinal and get the EMD term.
    pub ordinal: bool,
}

impl ModalitySpec {
    pub fn content_vocab(&self) -> usize {
        self.vocab - SpecialTokens::COUNT
    }

    pub fn specials(&self) -> SpecialTokens {
        SpecialTokens::after(self.content_vocab())
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab <= SpecialTokens::COUNT {
            return Err(Error::contract(format!("modality {} vocab too small", self.name)));
        }
        if self.alpha_in <= 0.0 || (self.role == Role::InputTarget && self.alpha_tgt <= 0.0) {
            return Err(Error::contract(format!("modality {} needs positive alpha", self.name)));
        }
        if self.max_tokens == 0 || self.max_tokens > self.pos.max_positions() {
            return Err(Error::contract(format!("modality {} max_tokens out of range", self.name)));
        }
        Ok(())
    }
}

/// Per-step token budgets.
#[derive(Debug, Clone, Copy)]
pub struct TokenBudget {
    pub n_in: usize,
    pub n_tgt: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget { n_in: 128, n_tgt: 128 }
    }
}

/// Outcome of scaling Dirichlet proportions into integer allocations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub counts: Vec<usize>,
    /// Budget actually distributed (cap-reduced when caps sum below it).
    pub budget_used: usize,
    pub reduced: bool,
}

/// Scales probabilities by `n`, floors, clamps to caps, then hands the
/// remainder one token at a time to the modality with the largest
/// fractional part not yet at its cap (ties by declaration order). When the
/// caps cannot absorb `n`, the budget drops to their sum.
pub fn allocate_budget(probs: &[f64], n: usize, caps: &[usize]) -> Allocation {
    assert_eq!(probs.len(), caps.len());
    let cap_sum: usize = caps.iter().sum();
    if cap_sum <= n {
        return Allocation { counts: caps.to_vec(), budget_used: cap_sum, reduced: cap_sum < n };
    }
    let mut counts: Vec<usize> = Vec::with_capacity(probs.len());
    let mut fracs: Vec<f64> = Vec::with_capacity(probs.len());
    for (&p, &cap) in probs.iter().zip(caps) {
        let quota = p * n as f64;
        let fl = (quota.floor() as usize).min(cap);
        counts.push(fl);
        fracs.push(quota - quota.floor());
    }
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
    for &i in &order {
        if leftover == 0 {
            break;
        }
        let room = caps[i] - counts[i];
        let take = room.min(leftover);
        counts[i] += take;
        leftover -= take;
    }
    debug_assert_eq!(leftover, 0);
    Allocation { counts, budget_used: n, reduced: false }
}

/// Draws Dirichlet proportions over the participating modalities.
fn dirichlet(alphas: &[f64], rng: &mut Rng) -> Vec<f64> {
    let draws: Vec<f64> = alphas.iter().map(|&a| rng.gamma(a)).collect();
    let sum: f64 = draws.iter().sum();
    draws.iter().map(|&d| d / sum).collect()
}

/// One step of Dirichlet modality sampling: input and target proportions
/// are drawn independently and scaled into token allocations. Input-only
/// modalities participate in the input draw but never receive targets.
pub fn sample_modality_mix(
    specs: &[ModalitySpec],
    budget: &TokenBudget,
    rng: &mut Rng,
) -> Result<(Allocation, Allocation)> {
    if specs.is_empty() {
        return Err(Error::contract("sample_modality_mix: no modalities"));
    }
    if !specs.iter().any(|s| s.role == Role::InputTarget) {
        return Err(Error::contract("sample_modality_mix: no target-capable modality"));
    }
    let in_alphas: Vec<f64> = specs.iter().map(|s| s.alpha_in).collect();
    let in_caps: Vec<usize> = specs.iter().map(|s| s.max_tokens).collect();
    let p_in = dirichlet(&in_alphas, rng);
    let input = allocate_budget(&p_in, budget.n_in, &in_caps);

    let tgt_idx: Vec<usize> =
        (0..specs.len()).filter(|&i| specs[i].role == Role::InputTarget).collect();
    let tgt_alphas: Vec<f64> = tgt_idx.iter().map(|&i| specs[i].alpha_tgt).collect();
    let tgt_caps: Vec<usize> = tgt_idx.iter().map(|&i| specs[i].max_tokens).collect();
    let p_tgt = dirichlet(&tgt_alphas, rng);
    let packed = allocate_budget(&p_tgt, budget.n_tgt, &tgt_caps);
    let mut counts = vec![0usize; specs.len()];
    for (k, &i) in tgt_idx.iter().enumerate() {
        counts[i] = packed.counts[k];
    }
    let target = Allocation { counts, budget_used: packed.budget_used, reduced: packed.reduced };
    Ok((input, target))
}

/// Token content of one training sample, aligned with the model's specs.
#[derive(Debug, Clone)]
pub struct MultimodalSample {
    /// `per_modality[i]` holds the full token sequence/map of modality `i`;
    /// position of token `k` is `k` (timestep or row-major grid index).
    pub per_modality: Vec<Vec<u32>>,
}

/// One input token: `(modality index, position, token id)`.
pub type InputEntry = (usize, usize, u32);

/// Sampled target block for one modality.
#[derive(Debug, Clone)]
pub struct TargetBlock {
    pub spec_idx: usize,
    /// Ascending positions.
    pub positions: Vec<usize>,
    pub tokens: Vec<u32>,
}

/// Samples input tokens and target tokens independently (overlap allowed;
/// positions within a modality are drawn without replacement and sorted).
pub fn build_input_target(
    sample: &MultimodalSample,
    specs: &[ModalitySpec],
    input: &Allocation,
    target: &Allocation,
    rng: &mut Rng,
) -> Result<(Vec<InputEntry>, Vec<TargetBlock>)> {
    if sample.per_modality.len() != specs.len() {
        return Err(Error::contract("sample modality count differs from specs"));
    }
    let mut entries = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let want = input.counts[i];
        let have = sample.per_modality[i].len();
        if want > have {
            return Err(Error::contract(format!(
                "input allocation {want} exceeds available {have} tokens of {}",
                spec.name
            )));
        }
        if want == 0 {
            continue;
        }
        let mut picks = rng.sample_without_replacement(have, want);
        picks.sort_unstable();
        for p in picks {
            entries.push((i, p, sample.per_modality[i][p]));
        }
    }
    let mut blocks = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let want = target.counts[i];
        let have = sample.per_modality[i].len();
        if want > have {
            return Err(Error::contract(format!(
                "target allocation {want} exceeds available {have} tokens of {}",
                spec.name
            )));
        }
        if want == 0 {
            continue;
        }
        let mut picks = rng.sample_without_replacement(have, want);
        picks.sort_unstable();
        let tokens = picks.iter().map(|&p| sample.per_modality[i][p]).collect();
        blocks.push(TargetBlock { spec_idx: i, positions: picks, tokens });
    }
    Ok((entries, blocks))
}
