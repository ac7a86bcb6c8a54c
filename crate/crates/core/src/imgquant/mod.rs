//! Patch-based image tokenization: a small attention encoder maps
//! non-overlapping patches to latents, FSQ discretizes them into a token
//! map, and a conditional denoiser reconstructs the image from a noisy
//! input and the quantized latent grid.

pub mod patch;

pub use patch::{patchify, unpatchify};

use crate::error::{Error, Result};
use crate::numkernel::init;
use crate::numkernel::nn::{self, AttnRefs};
use crate::numkernel::optim::{clip_grad_norm, AdamW, CosineSchedule};
use crate::numkernel::params::ParamSet;
use crate::numkernel::rng::Rng;
use crate::numkernel::tape::Tape;
use crate::numkernel::tensor::Tensor;
use crate::tsquant::fsq::{fsq_forward, fsq_token_decode, FsqConfig};

/// Linear-β noising schedule; `alpha_bar[0] = 1` so `t = 0` is the identity.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_diff: usize, beta_min: f64, beta_max: f64) -> Self {
        let mut betas = vec![0.0];
        let mut alpha_bars = vec![1.0];
        let mut acc = 1.0;
        for t in 1..=t_diff {
            let frac = if t_diff > 1 { (t - 1) as f64 / (t_diff - 1) as f64 } else { 0.0 };
            let beta = beta_min + frac * (beta_max - beta_min);
            acc *= 1.0 - beta;
            betas.push(beta);
            alpha_bars.push(acc);
        }
        NoiseSchedule { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    /// `I_t = √ᾱ_t · I + √(1−ᾱ_t) · ε`.
    pub fn noisy(&self, image: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bars[t];
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        image.iter().zip(eps).map(|(&x, &e)| sa * x + sn * e).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ImgTokenizerConfig {
    pub patch: usize,
    pub levels: Vec<u32>,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub enc_blocks: usize,
    pub denoiser_channels: usize,
    pub t_diff: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub lambda_fsq: f64,
}

impl Default for ImgTokenizerConfig {
    fn default() -> Self {
        ImgTokenizerConfig {
            patch: 8,
            levels: vec![5, 5, 5, 5],
            enc_dim: 64,
            enc_heads: 4,
            enc_blocks: 2,
            denoiser_channels: 32,
            t_diff: 100,
            beta_min: 1e-4,
            beta_max: 0.02,
            lambda_fsq: 0.0,
        }
    }
}

fn swiglu_hidden(d: usize) -> usize {
    (8 * d / 3).div_ceil(8) * 8
}

/// Patch encoder + FSQ + conditional denoising decoder for fixed-size images.
#[derive(Debug, Clone)]
pub struct ImgTokenizer {
    pub cfg: ImgTokenizerConfig,
    pub fsq: FsqConfig,
    pub params: ParamSet,
    pub schedule: NoiseSchedule,
    pub img_h: usize,
    pub img_w: usize,
    pub img_c: usize,
}

impl ImgTokenizer {
    pub fn new(cfg: ImgTokenizerConfig, img_h: usize, img_w: usize, img_c: usize, seed: u64) -> Result<Self> {
        if img_h % cfg.patch != 0 || img_w % cfg.patch != 0 {
            return Err(Error::contract(format!(
                "image {img_h}x{img_w} not divisible by patch {}",
                cfg.patch
            )));
        }
        let fsq = FsqConfig::new(cfg.levels.clone())?;
        let schedule = NoiseSchedule::linear(cfg.t_diff, cfg.beta_min, cfg.beta_max);
        let mut rng = Rng::substream(seed, 0x16);
        let mut p = ParamSet::new();
        let d = cfg.enc_dim;
        let (gh, gw) = (img_h / cfg.patch, img_w / cfg.patch);
        let flat = cfg.patch * cfg.patch * img_c;
        let lin = |p: &mut ParamSet, rng: &mut Rng, name: &str, rows: usize, cols: usize| {
            p.register(name.to_string(), init::trunc_normal(&[rows, cols], init::INIT_STD, rng));
        };
        lin(&mut p, &mut rng, "enc.proj.w", flat, d);
        p.register("enc.pos", init::trunc_normal(&[gh * gw, d], init::INIT_STD, &mut rng));
        let hidden = swiglu_hidden(d);
        for b in 0..cfg.enc_blocks {
            p.register(format!("enc.b{b}.ln1.g"), init::ones(&[d]));
            p.register(format!("enc.b{b}.ln1.b"), init::zeros(&[d]));
            for w in ["wq", "wk", "wv", "wo"] {
                lin(&mut p, &mut rng, &format!("enc.b{b}.attn.{w}"), d, d);
            }
            p.register(format!("enc.b{b}.ln2.g"), init::ones(&[d]));
            p.register(format!("enc.b{b}.ln2.b"), init::zeros(&[d]));
            lin(&mut p, &mut rng, &format!("enc.b{b}.ffn.wg"), d, hidden);
            lin(&mut p, &mut rng, &format!("enc.b{b}.ffn.wu"), d, hidden);
            lin(&mut p, &mut rng, &format!("enc.b{b}.ffn.wd"), hidden, d);
        }
        p.register("enc.ln.g", init::ones(&[d]));
        p.register("enc.ln.b", init::zeros(&[d]));
        lin(&mut p, &mut rng, "enc.latent.w", d, fsq.dim());

        let ch = cfg.denoiser_channels;
        let conv = |p: &mut ParamSet, rng: &mut Rng, name: &str, co: usize, ci: usize, k: usize| {
            p.register(format!("{name}.w"), init::trunc_normal(&[co, ci, k, k], init::INIT_STD, rng));
            p.register(format!("{name}.b"), init::zeros(&[co]));
        };
        conv(&mut p, &mut rng, "den.c1", ch, img_c + fsq.dim(), 3);
        p.register("den.temb", init::trunc_normal(&[cfg.t_diff + 1, ch], init::INIT_STD, &mut rng));
        conv(&mut p, &mut rng, "den.c2", ch, ch, 3);
        conv(&mut p, &mut rng, "den.c3", img_c, ch, 3);

        Ok(ImgTokenizer { cfg, fsq, params: p, schedule, img_h, img_w, img_c })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.img_h / self.cfg.patch, self.img_w / self.cfg.patch)
    }

    pub fn vocab_size(&self) -> usize {
        self.fsq.codebook_size() + crate::tsquant::SpecialTokens::COUNT
    }

    /// Patch encoder: `[h, w, c]` image → latent `[gh·gw, D]` in (−1, 1).
    pub fn encode_latent_on(&self, tape: &mut Tape, image: &Tensor) -> Result<Tensor> {
        let w = |n: &str| self.params.get(n);
        let patches = patchify(image, self.cfg.patch)?;
        let mut x = tape.matmul(&patches, w("enc.proj.w"))?;
        x = tape.add(&x, w("enc.pos"))?;
        for b in 0..self.cfg.enc_blocks {
            let pre = tape.layer_norm(&x, w(&format!("enc.b{b}.ln1.g")), w(&format!("enc.b{b}.ln1.b")))?;
            let refs = AttnRefs {
                wq: w(&format!("enc.b{b}.attn.wq")),
                wk: w(&format!("enc.b{b}.attn.wk")),
                wv: w(&format!("enc.b{b}.attn.wv")),
                wo: w(&format!("enc.b{b}.attn.wo")),
            };
            let attn = nn::multi_head_attention(tape, &pre, &pre, &refs, self.cfg.enc_heads, None, 0.0, None)?;
            x = tape.add(&x, &attn)?;
            let pre = tape.layer_norm(&x, w(&format!("enc.b{b}.ln2.g")), w(&format!("enc.b{b}.ln2.b")))?;
            let ffn = nn::swiglu_ffn(
                tape,
                &pre,
                w(&format!("enc.b{b}.ffn.wg")),
                w(&format!("enc.b{b}.ffn.wu")),
                w(&format!("enc.b{b}.ffn.wd")),
            )?;
            x = tape.add(&x, &ffn)?;
        }
        x = tape.layer_norm(&x, w("enc.ln.g"), w("enc.ln.b"))?;
        let z = tape.matmul(&x, w("enc.latent.w"))?;
        // sigmoid squash into (−1, 1)
        let s = tape.sigmoid(&z)?;
        let s2 = tape.scale(&s, 2.0)?;
        tape.add_scalar(&s2, -1.0)
    }

    /// Token map ι (row-major `gh·gw`) and quantized latents for an image.
    pub fn encode_image_tokens(&self, image: &Tensor) -> Result<(Vec<u32>, Tensor)> {
        let mut tape = Tape::inference();
        let z_e = self.encode_latent_on(&mut tape, image)?;
        let (z_q, tokens) = fsq_forward(&mut tape, &z_e, &self.fsq)?;
        Ok((tokens, z_q))
    }

    /// Conditioning volume `[D, h, w]` from quantized patch latents.
    fn cond_volume_on(&self, tape: &mut Tape, z_q: &Tensor) -> Result<Tensor> {
        let (gh, gw) = self.grid();
        let zt = tape.transpose2d(z_q)?; // [D, n]
        let grid = tape.reshape(&zt, vec![self.fsq.dim(), gh, gw])?;
        tape.upsample_nearest_2d(&grid, self.cfg.patch)
    }

    /// Denoiser `D_φ(I_t, t, Z_q)`: predicts the clean image (as `[c, h, w]`).
    pub fn denoise_on(&self, tape: &mut Tape, noisy_chw: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        let w = |n: &str| self.params.get(n);
        let x = tape.concat_first(&[noisy_chw, cond])?;
        let mut h = tape.conv2d(&x, w("den.c1.w"), Some(w("den.c1.b")), 1)?;
        let temb = tape.gather_rows(w("den.temb"), &[t as u32])?;
        let temb = tape.reshape(&temb, vec![self.cfg.denoiser_channels])?;
        h = tape.add_channel_bias(&h, &temb)?;
        h = tape.relu(&h)?;
        h = tape.conv2d(&h, w("den.c2.w"), Some(w("den.c2.b")), 1)?;
        h = tape.relu(&h)?;
        tape.conv2d(&h, w("den.c3.w"), Some(w("den.c3.b")), 1)
    }

    /// Single-shot reconstruction: the denoiser is evaluated once at a fixed
    /// mid-schedule timestep on pure noise, conditioned on the token map.
    pub fn reconstruct_image(&self, tokens: &[u32], rng: &mut Rng) -> Result<Tensor> {
        let (gh, gw) = self.grid();
        if tokens.len() != gh * gw {
            return Err(Error::contract(format!("token map has {} entries, expected {}", tokens.len(), gh * gw)));
        }
        let d = self.fsq.dim();
        let mut z = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            let (_, values) = fsq_token_decode(t, &self.fsq)?;
            z.extend(values);
        }
        let z_q = Tensor::new(vec![tokens.len(), d], z)?;
        let mut tape = Tape::inference();
        let cond = self.cond_volume_on(&mut tape, &z_q)?;
        let noise: Vec<f64> =
            (0..self.img_c * self.img_h * self.img_w).map(|_| rng.normal()).collect();
        let noisy = Tensor::new(vec![self.img_c, self.img_h, self.img_w], noise)?;
        let t_mid = self.cfg.t_diff / 2;
        let out = self.denoise_on(&mut tape, &noisy, t_mid, &cond)?;
        let clamped: Vec<f64> = out.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        chw_to_hwc(&Tensor::new(vec![self.img_c, self.img_h, self.img_w], clamped)?)
    }

    /// One training forward pass; returns `(loss, recon term, commit term)`.
    fn loss_on(&self, tape: &mut Tape, image: &Tensor, t: usize, eps: &[f64]) -> Result<(Tensor, f64, f64)> {
        let z_e = self.encode_latent_on(tape, image)?;
        let (z_q, _) = fsq_forward(tape, &z_e, &self.fsq)?;
        let cond = self.cond_volume_on(tape, &z_q)?;
        let clean_chw = hwc_to_chw(image)?;
        let noisy = Tensor::new(
            clean_chw.shape().to_vec(),
            self.schedule.noisy(clean_chw.data(), eps, t),
        )?;
        let pred = self.denoise_on(tape, &noisy, t, &cond)?;
        let recon = nn::mse(tape, &pred, &clean_chw)?;
        let sg_zq = Tensor::new(z_q.shape().to_vec(), z_q.data().to_vec())?;
        let commit = nn::mse(tape, &z_e, &sg_zq)?;
        let scaled = tape.scale(&commit, self.cfg.lambda_fsq)?;
        let loss = tape.add(&recon, &scaled)?;
        Ok((loss, recon.item(), commit.item()))
    }

    /// Optimizes the composite denoising + commitment loss.
    pub fn train(&mut self, images: &[Tensor], cfg: &ImgTrainCfg) -> Result<Vec<(usize, f64, f64)>> {
        if images.is_empty() {
            return Err(Error::contract("train_img_tokenizer: empty image set"));
        }
        let mut trace = Vec::new();
        if cfg.steps == 0 {
            return Ok(trace);
        }
        let schedule = CosineSchedule::new(cfg.base_lr, cfg.warmup, cfg.steps as u64);
        let mut opt = AdamW::new(&self.params, cfg.weight_decay);
        let n_px = self.img_c * self.img_h * self.img_w;
        for step in 0..cfg.steps {
            let mut rng = Rng::substream(cfg.seed, step as u64);
            let mut grad_acc: Vec<Tensor> =
                self.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut recon_sum = 0.0;
            let mut commit_sum = 0.0;
            for _ in 0..cfg.batch {
                let image = &images[rng.below(images.len())];
                let t = 1 + rng.below(self.cfg.t_diff);
                let eps: Vec<f64> = (0..n_px).map(|_| rng.normal()).collect();
                let mut tape = Tape::new();
                let (loss, recon, commit) = self.loss_on(&mut tape, image, t, &eps)?;
                if !loss.item().is_finite() {
                    return Err(Error::Diverged { step, loss: loss.item() });
                }
                recon_sum += recon;
                commit_sum += commit;
                let grads = tape.backward(&loss)?;
                for (acc, p) in grad_acc.iter_mut().zip(self.params.tensors()) {
                    let g = grads.for_param(p);
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
                }
            }
            let inv = 1.0 / cfg.batch as f64;
            grad_acc.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            clip_grad_norm(&mut grad_acc, cfg.clip);
            opt.step(&mut self.params, &grad_acc, schedule.lr_at(step as u64)?)?;
            trace.push((step, recon_sum * inv, commit_sum * inv));
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone)]
pub struct ImgTrainCfg {
    pub steps: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub clip: f64,
    pub seed: u64,
}

impl Default for ImgTrainCfg {
    fn default() -> Self {
        ImgTrainCfg { steps: 2000, batch: 4, base_lr: 1e-3, warmup: 100, weight_decay: 0.05, clip: 1.0, seed: 0 }
    }
}

/// `[h, w, c]` → `[c, h, w]`.
pub fn hwc_to_chw(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("hwc_to_chw", format!("{s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = image.data()[(y * w + x) * c + ch];
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// `[c, h, w]` → `[h, w, c]`.
pub fn chw_to_hwc(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("chw_to_hwc", format!("{s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = vec![0.0; h * w * c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data[(y * w + x) * c + ch] = image.data()[(ch * h + y) * w + x];
            }
        }
    }
    Tensor::new(vec![h, w, c], data)
}
