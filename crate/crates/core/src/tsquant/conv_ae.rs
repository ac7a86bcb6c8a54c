//! Learned FSQ tokenizer for univariate series: a dilated residual 1-D conv
//! encoder, finite scalar quantization of the latent, and a mirrored decoder
//! with nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::numkernel::init;
use crate::numkernel::optim::{clip_grad_norm, AdamW, CosineSchedule};
use crate::numkernel::params::ParamSet;
use crate::numkernel::rng::Rng;
use crate::numkernel::tape::Tape;
use crate::numkernel::tensor::Tensor;
use crate::tsquant::fsq::{fsq_forward, fsq_token_decode, FsqConfig};
use crate::tsquant::{SpecialTokens, TokenSequence};

/// Per-variable z-score statistics from the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(series: &[Vec<f64>]) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        for s in series {
            for &v in s {
                if v.is_finite() {
                    sum += v;
                    n += 1;
                }
            }
        }
        let mean = sum / n.max(1) as f64;
        let mut var = 0.0;
        for s in series {
            for &v in s {
                if v.is_finite() {
                    var += (v - mean) * (v - mean);
                }
            }
        }
        let std = (var / n.max(1) as f64).sqrt().max(1e-12);
        NormStats { mean, std }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone)]
pub struct FsqTsConfig {
    pub levels: Vec<u32>,
    pub hidden: usize,
    pub dilations: Vec<usize>,
    /// Total downsampling factor; realized as log2(factor) stride-2 convs.
    pub downsample: usize,
    pub lambda_fsq: f64,
}

impl Default for FsqTsConfig {
    fn default() -> Self {
        FsqTsConfig {
            levels: vec![8, 8, 8, 8],
            hidden: 64,
            dilations: vec![1, 2, 4, 8],
            downsample: 4,
            lambda_fsq: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainCfg {
    pub steps: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub clip: f64,
    pub seed: u64,
    /// Stop once validation MSE (normalized scale) drops to this level.
    pub target_val_mse: Option<f64>,
    pub val_every: usize,
}

impl Default for TrainCfg {
    fn default() -> Self {
        TrainCfg {
            steps: 10_000,
            batch: 8,
            base_lr: 1e-3,
            warmup: 100,
            weight_decay: 0.05,
            clip: 1.0,
            seed: 0,
            target_val_mse: None,
            val_every: 250,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    /// `(step, reconstruction, commitment)` per optimizer step.
    pub losses: Vec<(usize, f64, f64)>,
    /// `(step, validation mse)` at each evaluation point.
    pub val_mse: Vec<(usize, f64)>,
    pub steps_run: usize,
}

/// Encoder E_θ / FSQ / decoder D_φ triple for univariate series.
#[derive(Debug, Clone)]
pub struct FsqTsTokenizer {
    pub cfg: FsqTsConfig,
    pub fsq: FsqConfig,
    pub params: ParamSet,
    pub norm: NormStats,
}

impl FsqTsTokenizer {
    pub fn new(cfg: FsqTsConfig, seed: u64) -> Result<Self> {
        let fsq = FsqConfig::new(cfg.levels.clone())?;
        if !cfg.downsample.is_power_of_two() {
            return Err(Error::contract("downsample factor must be a power of two"));
        }
        let mut rng = Rng::substream(seed, 0xF5);
        let mut p = ParamSet::new();
        let h = cfg.hidden;
        let d = fsq.dim();
        let conv = |p: &mut ParamSet, rng: &mut Rng, name: &str, co: usize, ci: usize, k: usize| {
            p.register(format!("{name}.w"), init::trunc_normal(&[co, ci, k], init::INIT_STD, rng));
            p.register(format!("{name}.b"), init::zeros(&[co]));
        };
        conv(&mut p, &mut rng, "enc.stem", h, 1, 3);
        for (i, _) in cfg.dilations.iter().enumerate() {
            conv(&mut p, &mut rng, &format!("enc.res{i}.c1"), h, h, 3);
            conv(&mut p, &mut rng, &format!("enc.res{i}.c2"), h, h, 1);
        }
        let n_down = cfg.downsample.trailing_zeros() as usize;
        for i in 0..n_down {
            conv(&mut p, &mut rng, &format!("enc.down{i}"), h, h, 2);
        }
        conv(&mut p, &mut rng, "enc.head", d, h, 1);
        conv(&mut p, &mut rng, "dec.in", h, d, 1);
        for i in 0..n_down {
            conv(&mut p, &mut rng, &format!("dec.up{i}"), h, h, 3);
        }
        for (i, _) in cfg.dilations.iter().enumerate() {
            conv(&mut p, &mut rng, &format!("dec.res{i}.c1"), h, h, 3);
            conv(&mut p, &mut rng, &format!("dec.res{i}.c2"), h, h, 1);
        }
        conv(&mut p, &mut rng, "dec.head", 1, h, 3);
        Ok(FsqTsTokenizer { cfg, fsq, params: p, norm: NormStats { mean: 0.0, std: 1.0 } })
    }

    /// Latent length for an input of `l` values.
    pub fn latent_len(&self, l: usize) -> usize {
        l.div_ceil(self.cfg.downsample)
    }

    pub fn vocab_size(&self) -> usize {
        self.fsq.codebook_size() + SpecialTokens::COUNT
    }

    fn res_block(&self, tape: &mut Tape, x: &Tensor, name: &str, dilation: usize) -> Result<Tensor> {
        let c1w = self.params.get(&format!("{name}.c1.w"));
        let c1b = self.params.get(&format!("{name}.c1.b"));
        let c2w = self.params.get(&format!("{name}.c2.w"));
        let c2b = self.params.get(&format!("{name}.c2.b"));
        let y = tape.conv1d(x, c1w, Some(c1b), 1, dilation, dilation)?;
        let y = tape.relu(&y)?;
        let y = tape.conv1d(&y, c2w, Some(c2b), 1, 1, 0)?;
        tape.add(x, &y)
    }

    /// `[1, l]` (normalized) → latent `[l', D]`.
    pub fn encode_on(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        let w = |n: &str| self.params.get(n);
        let mut h = tape.conv1d(x, w("enc.stem.w"), Some(w("enc.stem.b")), 1, 1, 1)?;
        h = tape.relu(&h)?;
        for (i, &dil) in self.cfg.dilations.iter().enumerate() {
            h = self.res_block(tape, &h, &format!("enc.res{i}"), dil)?;
        }
        let n_down = self.cfg.downsample.trailing_zeros() as usize;
        for i in 0..n_down {
            h = tape.conv1d(&h, w(&format!("enc.down{i}.w")), Some(w(&format!("enc.down{i}.b"))), 2, 1, 0)?;
            h = tape.relu(&h)?;
        }
        let z = tape.conv1d(&h, w("enc.head.w"), Some(w("enc.head.b")), 1, 1, 0)?;
        tape.transpose2d(&z)
    }

    /// Latent `[l', D]` → reconstruction `[1, l' * downsample]` (normalized).
    pub fn decode_on(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor> {
        let w = |n: &str| self.params.get(n);
        let zt = tape.transpose2d(z)?;
        let mut h = tape.conv1d(&zt, w("dec.in.w"), Some(w("dec.in.b")), 1, 1, 0)?;
        h = tape.relu(&h)?;
        let n_down = self.cfg.downsample.trailing_zeros() as usize;
        for i in 0..n_down {
            h = tape.upsample_nearest_1d(&h, 2)?;
            h = tape.conv1d(&h, w(&format!("dec.up{i}.w")), Some(w(&format!("dec.up{i}.b"))), 1, 1, 1)?;
            h = tape.relu(&h)?;
        }
        for (i, &dil) in self.cfg.dilations.iter().enumerate().rev() {
            h = self.res_block(tape, &h, &format!("dec.res{i}"), dil)?;
        }
        tape.conv1d(&h, w("dec.head.w"), Some(w("dec.head.b")), 1, 1, 1)
    }

    fn padded_normalized(&self, series: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = series.iter().map(|&v| self.norm.normalize(v)).collect();
        let rem = x.len() % self.cfg.downsample;
        if rem != 0 {
            let last = *x.last().expect("nonempty series");
            x.extend(std::iter::repeat(last).take(self.cfg.downsample - rem));
        }
        x
    }

    /// Series (original units) → FSQ tokens of length `ceil(l / downsample)`.
    /// Lengths not divisible by the downsampling factor are edge-padded
    /// before encoding.
    pub fn encode_series(&self, series: &[f64]) -> Result<TokenSequence> {
        if series.is_empty() {
            return Err(Error::contract("encode_series: empty series"));
        }
        let x = self.padded_normalized(series);
        let input = Tensor::new(vec![1, x.len()], x)?;
        let mut tape = Tape::inference();
        let z_e = self.encode_on(&mut tape, &input)?;
        let (_, tokens) = fsq_forward(&mut tape, &z_e, &self.fsq)?;
        TokenSequence::new(tokens, "ts-fsq", self.vocab_size())
    }

    /// Tokens → series values (original units), `downsample` values per
    /// token. EOS truncates; other special tokens have no latent and error.
    pub fn decode_series(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let sp = SpecialTokens::after(self.fsq.codebook_size());
        let mut content = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t == sp.eos {
                break;
            }
            if sp.contains(t) {
                return Err(Error::InvalidToken { token: t, vocab: self.vocab_size() });
            }
            content.push(t);
        }
        if content.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.fsq.dim();
        let mut z = Vec::with_capacity(content.len() * d);
        for &t in &content {
            let (_, values) = fsq_token_decode(t, &self.fsq)?;
            z.extend(values);
        }
        let zt = Tensor::new(vec![content.len(), d], z)?;
        let mut tape = Tape::inference();
        let out = self.decode_on(&mut tape, &zt)?;
        Ok(out.data().iter().map(|&v| self.norm.denormalize(v)).collect())
    }

    /// Round-trip reconstruction metrics `(mse, mae)` on the normalized
    /// scale, truncating decoded output to each input's length.
    pub fn reconstruction_metrics(&self, data: &[Vec<f64>]) -> Result<(f64, f64)> {
        let mut se = 0.0;
        let mut ae = 0.0;
        let mut n = 0usize;
        for series in data {
            let tokens = self.encode_series(series)?;
            let decoded = self.decode_series(&tokens.tokens)?;
            for (&x, &y) in series.iter().zip(&decoded) {
                let d = self.norm.normalize(x) - self.norm.normalize(y);
                se += d * d;
                ae += d.abs();
                n += 1;
            }
        }
        Ok((se / n as f64, ae / n as f64))
    }

    /// Optimizes reconstruction + commitment loss on the (raw-unit) training
    /// split. Normalization stats are fit here and stored with the model.
    pub fn train(&mut self, train: &[Vec<f64>], val: &[Vec<f64>], cfg: &TrainCfg) -> Result<TrainTrace> {
        if train.is_empty() {
            return Err(Error::contract("train_fsq_ts: empty training set"));
        }
        self.norm = NormStats::fit(train);
        let mut trace = TrainTrace::default();
        if cfg.steps == 0 {
            return Ok(trace);
        }
        let schedule = CosineSchedule::new(cfg.base_lr, cfg.warmup, cfg.steps as u64);
        let mut opt = AdamW::new(&self.params, cfg.weight_decay);
        let lambda = self.cfg.lambda_fsq;

        for step in 0..cfg.steps {
            let mut rng = Rng::substream(cfg.seed, step as u64);
            let mut grad_acc: Vec<Tensor> =
                self.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut recon_sum = 0.0;
            let mut commit_sum = 0.0;
            for _ in 0..cfg.batch {
                let series = &train[rng.below(train.len())];
                let x = self.padded_normalized(series);
                let input = Tensor::new(vec![1, x.len()], x)?;
                let mut tape = Tape::new();
                let z_e = self.encode_on(&mut tape, &input)?;
                let (z_q, _) = fsq_forward(&mut tape, &z_e, &self.fsq)?;
                let recon = self.decode_on(&mut tape, &z_q)?;
                let recon_loss = crate::numkernel::nn::mse(&mut tape, &recon, &input)?;
                let sg_zq = Tensor::new(z_q.shape().to_vec(), z_q.data().to_vec())?;
                let commit_loss = crate::numkernel::nn::mse(&mut tape, &z_e, &sg_zq)?;
                let scaled = tape.scale(&commit_loss, lambda)?;
                let loss = tape.add(&recon_loss, &scaled)?;
                if !loss.item().is_finite() {
                    return Err(Error::Diverged { step, loss: loss.item() });
                }
                recon_sum += recon_loss.item();
                commit_sum += commit_loss.item();
                let grads = tape.backward(&loss)?;
                for (acc, p) in grad_acc.iter_mut().zip(self.params.tensors()) {
                    let g = grads.for_param(p);
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
                }
            }
            let inv = 1.0 / cfg.batch as f64;
            grad_acc.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            clip_grad_norm(&mut grad_acc, cfg.clip);
            let lr = schedule.lr_at(step as u64)?;
            opt.step(&mut self.params, &grad_acc, lr)?;
            trace.losses.push((step, recon_sum * inv, commit_sum * inv));
            trace.steps_run = step + 1;

            let due = (step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps;
            if due && !val.is_empty() {
                let (mse, _) = self.reconstruction_metrics(val)?;
                trace.val_mse.push((step + 1, mse));
                if cfg.target_val_mse.is_some_and(|t| mse <= t) {
                    break;
                }
            }
        }
        Ok(trace)
    }
}
