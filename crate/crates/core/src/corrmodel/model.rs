//! The cross-modal correlation encoder–decoder.
//!
//! A shared self-attention encoder fuses the concatenated input tokens of
//! all modalities; a cross-attending decoder predicts target tokens per
//! modality. Sequence modalities decode autoregressively under a causal
//! mask; grid modalities are predicted in one masked pass. Output heads are
//! zero-initialized, so an untrained model emits exactly uniform logits.

use crate::error::{Error, Result};
use crate::numkernel::init;
use crate::numkernel::nn::{self, AttnRefs};
use crate::numkernel::optim::{clip_grad_norm, AdamW, CosineSchedule};
use crate::numkernel::params::ParamSet;
use crate::numkernel::rng::Rng;
use crate::numkernel::tape::Tape;
use crate::numkernel::tensor::Tensor;

use super::modality::{
    build_input_target, sample_modality_mix, InputEntry, ModalitySpec, MultimodalSample, Role,
    TargetBlock, TokenBudget,
};

#[derive(Debug, Clone)]
pub struct CorrConfig {
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Weight of the ordinal EMD term on deterministic-binned modalities.
    pub w_emd: f64,
}

impl Default for CorrConfig {
    fn default() -> Self {
        CorrConfig { dim: 128, heads: 4, enc_layers: 2, dec_layers: 2, w_emd: 0.1 }
    }
}

fn swiglu_hidden(d: usize) -> usize {
    (8 * d / 3).div_ceil(8) * 8
}

#[derive(Debug, Clone)]
pub struct CorrEncoderDecoder {
    pub cfg: CorrConfig,
    pub specs: Vec<ModalitySpec>,
    pub params: ParamSet,
}

/// Per-modality embedded input block kept for gradient inspection.
pub struct EncodedInput {
    /// Fused representation `[n, d]` (final encoder LayerNorm applied).
    pub z: Tensor,
    /// `(spec index, embedded block before the encoder)` per present modality.
    pub blocks: Vec<(usize, Tensor)>,
}

impl CorrEncoderDecoder {
    pub fn new(cfg: CorrConfig, specs: Vec<ModalitySpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::contract("correlation model needs at least one modality"));
        }
        for s in &specs {
            s.validate()?;
        }
        let mut rng = Rng::substream(seed, 0xC0);
        let mut p = ParamSet::new();
        let d = cfg.dim;
        let hidden = swiglu_hidden(d);
        let lin = |p: &mut ParamSet, rng: &mut Rng, name: String, rows: usize, cols: usize| {
            p.register(name, init::trunc_normal(&[rows, cols], init::INIT_STD, rng));
        };
        for s in &specs {
            lin(&mut p, &mut rng, format!("emb.{}.tok", s.name), s.vocab, d);
            p.register(
                format!("emb.{}.pos", s.name),
                init::trunc_normal(&[s.pos.max_positions(), d], init::INIT_STD, &mut rng),
            );
        }
        let block = |p: &mut ParamSet, rng: &mut Rng, prefix: &str, cross: bool| {
            p.register(format!("{prefix}.ln1.g"), init::ones(&[d]));
            p.register(format!("{prefix}.ln1.b"), init::zeros(&[d]));
            for w in ["wq", "wk", "wv", "wo"] {
                lin(p, rng, format!("{prefix}.attn.{w}"), d, d);
            }
            if cross {
                p.register(format!("{prefix}.ln2.g"), init::ones(&[d]));
                p.register(format!("{prefix}.ln2.b"), init::zeros(&[d]));
                for w in ["wq", "wk", "wv", "wo"] {
                    lin(p, rng, format!("{prefix}.cross.{w}"), d, d);
                }
            }
            let ffn_ln = if cross { "ln3" } else { "ln2" };
            p.register(format!("{prefix}.{ffn_ln}.g"), init::ones(&[d]));
            p.register(format!("{prefix}.{ffn_ln}.b"), init::zeros(&[d]));
            lin(p, rng, format!("{prefix}.ffn.wg"), d, hidden);
            lin(p, rng, format!("{prefix}.ffn.wu"), d, hidden);
            lin(p, rng, format!("{prefix}.ffn.wd"), hidden, d);
        };
        for l in 0..cfg.enc_layers {
            block(&mut p, &mut rng, &format!("enc.l{l}"), false);
        }
        p.register("enc.ln.g", init::ones(&[d]));
        p.register("enc.ln.b", init::zeros(&[d]));
        for l in 0..cfg.dec_layers {
            block(&mut p, &mut rng, &format!("dec.l{l}"), true);
        }
        p.register("dec.ln.g", init::ones(&[d]));
        p.register("dec.ln.b", init::zeros(&[d]));
        for s in &specs {
            if s.role == Role::InputTarget {
                // zero-init: untrained logits are uniform
                p.register(format!("head.{}.w", s.name), init::zeros(&[d, s.vocab]));
            }
        }
        Ok(CorrEncoderDecoder { cfg, specs, params: p })
    }

    pub fn spec_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    fn w(&self, name: &str) -> &Tensor {
        self.params.get(name)
    }

    /// Embeds one modality block: token embedding + positional embedding.
    fn embed_block(
        &self,
        tape: &mut Tape,
        spec_idx: usize,
        positions: &[usize],
        tokens: &[u32],
    ) -> Result<Tensor> {
        let name = &self.specs[spec_idx].name;
        let tok = tape.gather_rows(self.w(&format!("emb.{name}.tok")), tokens)?;
        let pos_idx: Vec<u32> = positions.iter().map(|&p| p as u32).collect();
        let pos = tape.gather_rows(self.w(&format!("emb.{name}.pos")), &pos_idx)?;
        tape.add(&tok, &pos)
    }

    fn encoder_block(&self, tape: &mut Tape, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let pre = tape.layer_norm(x, self.w(&format!("{prefix}.ln1.g")), self.w(&format!("{prefix}.ln1.b")))?;
        let refs = AttnRefs {
            wq: self.w(&format!("{prefix}.attn.wq")),
            wk: self.w(&format!("{prefix}.attn.wk")),
            wv: self.w(&format!("{prefix}.attn.wv")),
            wo: self.w(&format!("{prefix}.attn.wo")),
        };
        let attn = nn::multi_head_attention(tape, &pre, &pre, &refs, self.cfg.heads, None, 0.0, None)?;
        let x = tape.add(x, &attn)?;
        let pre = tape.layer_norm(&x, self.w(&format!("{prefix}.ln2.g")), self.w(&format!("{prefix}.ln2.b")))?;
        let ffn = nn::swiglu_ffn(
            tape,
            &pre,
            self.w(&format!("{prefix}.ffn.wg")),
            self.w(&format!("{prefix}.ffn.wu")),
            self.w(&format!("{prefix}.ffn.wd")),
        )?;
        tape.add(&x, &ffn)
    }

    /// Encodes a concatenated input-token sequence into the fused
    /// representation. Entries must be grouped by modality (declaration
    /// order) as produced by `build_input_target`.
    pub fn encode_on(&self, tape: &mut Tape, entries: &[InputEntry]) -> Result<EncodedInput> {
        if entries.is_empty() {
            return Err(Error::contract("encoder input is empty"));
        }
        let mut blocks: Vec<(usize, Tensor)> = Vec::new();
        let mut start = 0;
        while start < entries.len() {
            let spec_idx = entries[start].0;
            let mut end = start;
            while end < entries.len() && entries[end].0 == spec_idx {
                end += 1;
            }
            let positions: Vec<usize> = entries[start..end].iter().map(|e| e.1).collect();
            let tokens: Vec<u32> = entries[start..end].iter().map(|e| e.2).collect();
            let emb = self.embed_block(tape, spec_idx, &positions, &tokens)?;
            blocks.push((spec_idx, emb));
            start = end;
        }
        let refs: Vec<&Tensor> = blocks.iter().map(|(_, t)| t).collect();
        let mut x = if refs.len() == 1 { refs[0].clone() } else { tape.concat_first(&refs)? };
        for l in 0..self.cfg.enc_layers {
            x = self.encoder_block(tape, &x, &format!("enc.l{l}"))?;
        }
        let z = tape.layer_norm(&x, self.w("enc.ln.g"), self.w("enc.ln.b"))?;
        Ok(EncodedInput { z, blocks })
    }

    /// Decoder input tokens for one target block: previous target token per
    /// slot for sequence modalities (teacher forcing, PAD first), PAD mask
    /// tokens everywhere for grid modalities.
    fn decoder_prev_tokens(&self, spec_idx: usize, tokens: &[u32]) -> Vec<u32> {
        let spec = &self.specs[spec_idx];
        let pad = spec.specials().pad;
        if spec.pos.is_seq() {
            let mut prev = Vec::with_capacity(tokens.len());
            prev.push(pad);
            prev.extend_from_slice(&tokens[..tokens.len() - 1]);
            prev
        } else {
            vec![pad; tokens.len()]
        }
    }

    /// Runs the decoder for one target modality and returns logits
    /// `[n_tgt, vocab]`.
    pub fn decode_logits_on(
        &self,
        tape: &mut Tape,
        z: &Tensor,
        spec_idx: usize,
        positions: &[usize],
        prev_tokens: &[u32],
    ) -> Result<Tensor> {
        let spec = &self.specs[spec_idx];
        if spec.role != Role::InputTarget {
            return Err(Error::contract(format!("modality {} has no decoder head", spec.name)));
        }
        let mut x = self.embed_block(tape, spec_idx, positions, prev_tokens)?;
        let mask = spec.pos.is_seq().then(|| nn::causal_mask(positions.len()));
        for l in 0..self.cfg.dec_layers {
            let prefix = format!("dec.l{l}");
            let pre = tape.layer_norm(&x, self.w(&format!("{prefix}.ln1.g")), self.w(&format!("{prefix}.ln1.b")))?;
            let self_refs = AttnRefs {
                wq: self.w(&format!("{prefix}.attn.wq")),
                wk: self.w(&format!("{prefix}.attn.wk")),
                wv: self.w(&format!("{prefix}.attn.wv")),
                wo: self.w(&format!("{prefix}.attn.wo")),
            };
            let self_attn =
                nn::multi_head_attention(tape, &pre, &pre, &self_refs, self.cfg.heads, mask.as_ref(), 0.0, None)?;
            x = tape.add(&x, &self_attn)?;
            let pre = tape.layer_norm(&x, self.w(&format!("{prefix}.ln2.g")), self.w(&format!("{prefix}.ln2.b")))?;
            let cross_refs = AttnRefs {
                wq: self.w(&format!("{prefix}.cross.wq")),
                wk: self.w(&format!("{prefix}.cross.wk")),
                wv: self.w(&format!("{prefix}.cross.wv")),
                wo: self.w(&format!("{prefix}.cross.wo")),
            };
            let cross = nn::multi_head_attention(tape, &pre, z, &cross_refs, self.cfg.heads, None, 0.0, None)?;
            x = tape.add(&x, &cross)?;
            let pre = tape.layer_norm(&x, self.w(&format!("{prefix}.ln3.g")), self.w(&format!("{prefix}.ln3.b")))?;
            let ffn = nn::swiglu_ffn(
                tape,
                &pre,
                self.w(&format!("{prefix}.ffn.wg")),
                self.w(&format!("{prefix}.ffn.wu")),
                self.w(&format!("{prefix}.ffn.wd")),
            )?;
            x = tape.add(&x, &ffn)?;
        }
        let x = tape.layer_norm(&x, self.w("dec.ln.g"), self.w("dec.ln.b"))?;
        tape.matmul(&x, self.w(&format!("head.{}.w", spec.name)))
    }

    /// Cross-entropy + ordinal EMD loss over one sample's target blocks.
    /// Returns `(loss tensor, mean CE per modality, mean EMD)`.
    pub fn sample_loss_on(
        &self,
        tape: &mut Tape,
        z: &Tensor,
        targets: &[TargetBlock],
    ) -> Result<(Tensor, Vec<(usize, f64)>, f64)> {
        if targets.is_empty() {
            return Err(Error::contract("no target blocks for loss"));
        }
        let mut ce_terms: Vec<Tensor> = Vec::new();
        let mut ce_values = Vec::new();
        let mut emd_terms: Vec<Tensor> = Vec::new();
        let mut emd_value = 0.0;
        for block in targets {
            let spec = &self.specs[block.spec_idx];
            let prev = self.decoder_prev_tokens(block.spec_idx, &block.tokens);
            let logits = self.decode_logits_on(tape, z, block.spec_idx, &block.positions, &prev)?;
            let ce = tape.cross_entropy(&logits, &block.tokens)?;
            ce_values.push((block.spec_idx, ce.item()));
            ce_terms.push(ce);
            if spec.ordinal && self.cfg.w_emd > 0.0 {
                let emd = self.emd_on(tape, &logits, spec, &block.tokens)?;
                emd_value += emd.item();
                emd_terms.push(emd);
            }
        }
        let mut loss = ce_terms[0].clone();
        for t in &ce_terms[1..] {
            loss = tape.add(&loss, t)?;
        }
        loss = tape.scale(&loss, 1.0 / ce_terms.len() as f64)?;
        if !emd_terms.is_empty() {
            let mut emd = emd_terms[0].clone();
            for t in &emd_terms[1..] {
                emd = tape.add(&emd, t)?;
            }
            emd = tape.scale(&emd, self.cfg.w_emd / emd_terms.len() as f64)?;
            loss = tape.add(&loss, &emd)?;
            emd_value /= emd_terms.len() as f64;
        }
        Ok((loss, ce_values, emd_value))
    }

    /// Ordinal EMD over the content vocabulary: mean over target tokens of
    /// the L1 distance between predicted and one-hot CDFs.
    fn emd_on(&self, tape: &mut Tape, logits: &Tensor, spec: &ModalitySpec, targets: &[u32]) -> Result<Tensor> {
        let t_content = spec.content_vocab();
        let content = tape.slice_cols(logits, 0, t_content)?;
        let probs = tape.softmax_last(&content)?;
        let cdf = tape.cumsum_last(&probs)?;
        let n = targets.len();
        let mut target_cdf = vec![0.0; n * t_content];
        for (i, &t) in targets.iter().enumerate() {
            for k in t as usize..t_content {
                target_cdf[i * t_content + k] = 1.0;
            }
        }
        let target_cdf = Tensor::new(vec![n, t_content], target_cdf)?;
        let diff = tape.sub(&cdf, &target_cdf)?;
        let dist = tape.abs(&diff)?;
        let total = tape.sum_all(&dist)?;
        tape.scale(&total, 1.0 / n as f64)
    }
}

/// Standalone ordinal EMD between a distribution over `T` ordered bins and
/// a target bin: `Σ_k |CDF_pred(k) − CDF_target(k)|`.
pub fn emd_ordinal_loss(pred: &[f64], target: usize) -> Result<f64> {
    if pred.is_empty() || target >= pred.len() {
        return Err(Error::contract(format!("target {target} outside {} bins", pred.len())));
    }
    let sum: f64 = pred.iter().sum();
    if pred.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("pred is not a distribution (sum {sum})")));
    }
    let mut cdf = 0.0;
    let mut out = 0.0;
    for (k, &p) in pred.iter().enumerate() {
        cdf += p;
        let target_cdf = if k >= target { 1.0 } else { 0.0 };
        out += (cdf - target_cdf).abs();
    }
    Ok(out)
}

/// Training statistics for one optimizer step.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub loss: f64,
    /// Mean CE over target modalities.
    pub ce: f64,
    pub emd: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

pub struct CorrTrainer {
    pub opt: AdamW,
    pub schedule: CosineSchedule,
    pub budget: TokenBudget,
    pub batch: usize,
    pub clip: f64,
    pub seed: u64,
    pub step: usize,
}

impl CorrTrainer {
    pub fn new(model: &CorrEncoderDecoder, cfg: &CorrTrainCfg) -> Self {
        CorrTrainer {
            opt: AdamW::new(&model.params, cfg.weight_decay),
            schedule: CosineSchedule::new(cfg.base_lr, cfg.warmup, cfg.steps as u64),
            budget: cfg.budget,
            batch: cfg.batch,
            clip: cfg.clip,
            seed: cfg.seed,
            step: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrTrainCfg {
    pub steps: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub clip: f64,
    pub seed: u64,
    pub budget: TokenBudget,
}

impl Default for CorrTrainCfg {
    fn default() -> Self {
        CorrTrainCfg {
            steps: 20_000,
            batch: 2,
            base_lr: 3e-4,
            warmup: 500,
            weight_decay: 0.05,
            clip: 1.0,
            seed: 0,
            budget: TokenBudget::default(),
        }
    }
}

/// One Dirichlet-sampled training step over a batch of samples: every
/// sample gets fresh modality allocations and token draws, losses are
/// averaged, and a single clipped AdamW update is applied. A non-finite
/// loss skips the update and flags the step.
pub fn corr_train_step(
    model: &mut CorrEncoderDecoder,
    trainer: &mut CorrTrainer,
    dataset: &[MultimodalSample],
    dataset_offset: u64,
) -> Result<StepStats> {
    let mut rng = Rng::substream(trainer.seed, (dataset_offset << 32) ^ trainer.step as u64);
    let mut grad_acc: Vec<Tensor> =
        model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss_sum = 0.0;
    let mut ce_sum = 0.0;
    let mut emd_sum = 0.0;
    let mut used = 0usize;
    for _ in 0..trainer.batch {
        let sample = &dataset[rng.below(dataset.len())];
        let (in_alloc, tgt_alloc) = sample_modality_mix(&model.specs, &trainer.budget, &mut rng)?;
        let (entries, targets) =
            build_input_target(sample, &model.specs, &in_alloc, &tgt_alloc, &mut rng)?;
        if entries.is_empty() || targets.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let encoded = model.encode_on(&mut tape, &entries)?;
        let (loss, ce_values, emd) = model.sample_loss_on(&mut tape, &encoded.z, &targets)?;
        if !loss.item().is_finite() {
            return Ok(StepStats { loss: loss.item(), ce: f64::NAN, emd, grad_norm: f64::NAN, skipped: true });
        }
        loss_sum += loss.item();
        ce_sum += ce_values.iter().map(|(_, v)| v).sum::<f64>() / ce_values.len() as f64;
        emd_sum += emd;
        used += 1;
        let grads = tape.backward(&loss)?;
        for (acc, p) in grad_acc.iter_mut().zip(model.params.tensors()) {
            let g = grads.for_param(p);
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
        }
    }
    if used == 0 {
        trainer.step += 1;
        return Ok(StepStats { loss: 0.0, ce: 0.0, emd: 0.0, grad_norm: 0.0, skipped: true });
    }
    let inv = 1.0 / used as f64;
    grad_acc.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
    let grad_norm = clip_grad_norm(&mut grad_acc, trainer.clip);
    let lr = trainer.schedule.lr_at((trainer.step as u64).min(trainer.schedule.total_steps))?;
    let skipped = trainer.opt.step(&mut model.params, &grad_acc, lr)?;
    trainer.step += 1;
    Ok(StepStats { loss: loss_sum * inv, ce: ce_sum * inv, emd: emd_sum * inv, grad_norm, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrmodel::modality::PosKind;

    pub(crate) fn tiny_specs() -> Vec<ModalitySpec> {
        vec![
            ModalitySpec {
                name: "grid".into(),
                vocab: 12,
                pos: PosKind::Grid { h: 2, w: 2 },
                role: Role::InputTarget,
                alpha_in: 0.5,
                alpha_tgt: 0.5,
                max_tokens: 4,
                ordinal: false,
            },
            ModalitySpec {
                name: "seq".into(),
                vocab: 10,
                pos: PosKind::Seq { max_len: 8 },
                role: Role::InputTarget,
                alpha_in: 0.5,
                alpha_tgt: 0.5,
                max_tokens: 8,
                ordinal: true,
            },
        ]
    }

    pub(crate) fn tiny_model(seed: u64) -> CorrEncoderDecoder {
        let cfg = CorrConfig { dim: 16, heads: 2, enc_layers: 1, dec_layers: 1, w_emd: 0.1 };
        CorrEncoderDecoder::new(cfg, tiny_specs(), seed).unwrap()
    }

    #[test]
    fn untrained_ce_is_ln_vocab() {
        let model = tiny_model(1);
        let mut tape = Tape::new();
        let entries = vec![(0usize, 0usize, 1u32), (0, 2, 3)];
        let encoded = model.encode_on(&mut tape, &entries).unwrap();
        let targets = vec![TargetBlock { spec_idx: 1, positions: vec![0, 3, 5], tokens: vec![1, 2, 3] }];
        let (_, ce, _) = model.sample_loss_on(&mut tape, &encoded.z, &targets).unwrap();
        let expected = (10f64).ln();
        assert!((ce[0].1 - expected).abs() < 1e-9, "ce {} vs ln V {}", ce[0].1, expected);
    }

    #[test]
    fn modality_average_of_two_blocks() {
        let model = tiny_model(2);
        let mut tape = Tape::new();
        let entries = vec![(0usize, 1usize, 0u32)];
        let encoded = model.encode_on(&mut tape, &entries).unwrap();
        let targets = vec![
            TargetBlock { spec_idx: 0, positions: vec![0, 1], tokens: vec![1, 2] },
            TargetBlock { spec_idx: 1, positions: vec![0, 1], tokens: vec![3, 4] },
        ];
        let (loss, ce, emd) = model.sample_loss_on(&mut tape, &encoded.z, &targets).unwrap();
        let expected = (ce[0].1 + ce[1].1) / 2.0 + 0.1 * emd;
        assert!((loss.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn emd_examples() {
        // one-hot at target -> 0
        assert_eq!(emd_ordinal_loss(&[0.0, 1.0, 0.0, 0.0], 1).unwrap(), 0.0);
        // T=4, target 1, one-hot at 3 -> 2.0
        assert_eq!(emd_ordinal_loss(&[0.0, 0.0, 0.0, 1.0], 1).unwrap(), 2.0);
        // T=4, target 0, uniform -> 1.5
        let v = emd_ordinal_loss(&[0.25; 4], 0).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
        // non-distribution input
        assert!(emd_ordinal_loss(&[0.5, 0.2], 0).is_err());
        assert!(emd_ordinal_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn emd_monotone_in_ordinal_distance() {
        let t = 10;
        for target in 0..t {
            let mut last = -1.0;
            for d in 0..t - target.max(1) {
                let hot = target + d;
                if hot >= t {
                    break;
                }
                let mut pred = vec![0.0; t];
                pred[hot] = 1.0;
                let v = emd_ordinal_loss(&pred, target).unwrap();
                assert!((v - d as f64).abs() < 1e-12);
                assert!(v > last);
                last = v;
            }
        }
    }

    #[test]
    fn tape_emd_matches_plain_function() {
        let model = tiny_model(3);
        let mut tape = Tape::new();
        let entries = vec![(1usize, 0usize, 1u32), (1, 2, 3)];
        let encoded = model.encode_on(&mut tape, &entries).unwrap();
        let targets = vec![TargetBlock { spec_idx: 1, positions: vec![1, 4], tokens: vec![2, 5] }];
        let block = &targets[0];
        let prev = model.decoder_prev_tokens(1, &block.tokens);
        let logits = model
            .decode_logits_on(&mut tape, &encoded.z, 1, &block.positions, &prev)
            .unwrap();
        let spec = &model.specs[1];
        let emd_t = model.emd_on(&mut tape, &logits, spec, &block.tokens).unwrap();

        // plain-path oracle: softmax over the content slice, then CDF L1
        let t_content = spec.content_vocab();
        let mut expect = 0.0;
        for (i, &target) in block.tokens.iter().enumerate() {
            let row = &logits.data()[i * spec.vocab..i * spec.vocab + t_content];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            expect += emd_ordinal_loss(&probs, target as usize).unwrap();
        }
        expect /= block.tokens.len() as f64;
        assert!((emd_t.item() - expect).abs() < 1e-12);
    }

    #[test]
    fn causal_logits_ignore_future_tokens() {
        let model = tiny_model(4);
        let entries = vec![(0usize, 0usize, 2u32)];
        let positions: Vec<usize> = (0..6).collect();
        let base = vec![1u32, 2, 3, 4, 5, 1];
        let mut changed = base.clone();
        changed[4] = 0;
        changed[5] = 3;
        let logits_for = |tokens: &[u32]| {
            let mut tape = Tape::inference();
            let encoded = model.encode_on(&mut tape, &entries).unwrap();
            let prev = model.decoder_prev_tokens(1, tokens);
            model
                .decode_logits_on(&mut tape, &encoded.z, 1, &positions, &prev)
                .unwrap()
        };
        let a = logits_for(&base);
        let b = logits_for(&changed);
        let vocab = model.specs[1].vocab;
        // positions 0..=4 see identical prefixes (prev tokens 0..=3 equal)
        for k in 0..=4 {
            for j in 0..vocab {
                assert_eq!(a.data()[k * vocab + j], b.data()[k * vocab + j], "position {k}");
            }
        }
        // position 5 saw a different prev token
        let differs = (0..vocab).any(|j| a.data()[5 * vocab + j] != b.data()[5 * vocab + j]);
        assert!(differs);
    }

    #[test]
    fn grid_decoding_is_one_shot_masked() {
        let model = tiny_model(5);
        // grid prev tokens are all PAD regardless of the target values
        let prev = model.decoder_prev_tokens(0, &[1, 2, 3]);
        let pad = model.specs[0].specials().pad;
        assert_eq!(prev, vec![pad; 3]);
        // sequence gets shifted teacher forcing
        let prev = model.decoder_prev_tokens(1, &[4, 5, 6]);
        let pad = model.specs[1].specials().pad;
        assert_eq!(prev, vec![pad, 4, 5]);
    }

    #[test]
    fn training_reduces_loss_on_fixed_task() {
        let mut model = tiny_model(6);
        let dataset: Vec<MultimodalSample> = (0..8)
            .map(|i| MultimodalSample {
                per_modality: vec![
                    vec![(i % 4) as u32; 4],
                    (0..8).map(|k| ((i + k) % 6) as u32).collect(),
                ],
            })
            .collect();
        let cfg = CorrTrainCfg {
            steps: 60,
            batch: 2,
            base_lr: 3e-3,
            warmup: 5,
            seed: 7,
            budget: TokenBudget { n_in: 8, n_tgt: 8 },
            ..Default::default()
        };
        let mut trainer = CorrTrainer::new(&model, &cfg);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..cfg.steps {
            let stats = corr_train_step(&mut model, &mut trainer, &dataset, 0).unwrap();
            assert!(!stats.skipped);
            if first.is_none() {
                first = Some(stats.loss);
            }
            last = stats.loss;
        }
        assert!(last < first.unwrap() * 0.8, "loss {first:?} -> {last}");
    }
}
