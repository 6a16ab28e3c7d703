//! Convolutional variational autoencoder between log-mel spectrograms
//! and the latent grid `[C, T/r, F/r]`.

use candle_core::{DType, Device, Module, Tensor, D};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::{MelConfig, MelSpectrogram};
use candle_nn::Optimizer;

use crate::error::{invalid, Error, Result};
use crate::nn::layers::Conv2d;
use crate::nn::optim::{adamw, epoch_batches, finite_scalar};
use crate::nn::{Checkpoint, ParamBuilder, ParamStore};
use crate::rng::SeededRng;

pub const CHECKPOINT_KIND: &str = "codec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Latent channels C.
    pub channels: usize,
    /// Compression factor r along both axes, a power of two.
    pub compression: usize,
    pub base_width: usize,
    /// KL weight.
    pub beta: f64,
}

impl CodecConfig {
    pub fn paper() -> Self {
        Self { channels: 16, compression: 8, base_width: 64, beta: 1e-4 }
    }

    pub fn desk() -> Self {
        Self { channels: 16, compression: 8, base_width: 16, beta: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_width == 0 {
            return invalid("codec channels and width must be positive");
        }
        if self.compression < 2 || !self.compression.is_power_of_two() {
            return invalid(format!("compression {} is not a power of two >= 2", self.compression));
        }
        if !(self.beta >= 0.0) {
            return invalid("beta must be non-negative");
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.compression.trailing_zeros() as usize
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width * (1 << stage.min(2))
    }

    /// Time frames after reflect padding up to a multiple of r.
    pub fn padded_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.compression) * self.compression
    }

    /// Latent shape `[C, T/r, F/r]` for a mel of `n_mels x frames`.
    pub fn latent_shape(&self, n_mels: usize, frames: usize) -> Result<[usize; 3]> {
        if n_mels % self.compression != 0 {
            return invalid(format!("{n_mels} mel bins not divisible by r = {}", self.compression));
        }
        Ok([self.channels, self.padded_frames(frames) / self.compression, n_mels / self.compression])
    }
}

/// Dataset statistics frozen alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecStats {
    pub mel_mean: f64,
    pub mel_std: f64,
    /// Multiplier giving unit-variance latents.
    pub latent_scale: f64,
}

impl Default for CodecStats {
    fn default() -> Self {
        Self { mel_mean: 0.0, mel_std: 1.0, latent_scale: 1.0 }
    }
}

/// One latent `[C, T/r, F/r]` plus the unpadded frame count.
#[derive(Debug, Clone)]
pub struct LatentGrid {
    pub values: Tensor,
    pub frames: usize,
}

impl LatentGrid {
    pub fn new(values: Tensor, frames: usize) -> Result<Self> {
        if values.rank() != 3 {
            return invalid(format!("latent grid must be [C, T/r, F/r], got {:?}", values.dims()));
        }
        let v = values.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return invalid("latent grid contains non-finite values");
        }
        Ok(Self { values, frames })
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = self.values.dims();
        [d[0], d[1], d[2]]
    }
}

/// Stacks latents into a batch `[B, C, T/r, F/r]`.
pub fn stack_latents(latents: &[&LatentGrid]) -> Result<Tensor> {
    let v: Vec<Tensor> = latents.iter().map(|l| l.values.clone()).collect();
    Ok(Tensor::stack(&v, 0)?)
}

struct Stage {
    a: Conv2d,
    b: Conv2d,
}

pub struct Codec {
    pub config: CodecConfig,
    pub stats: CodecStats,
    pub mel: MelConfig,
    store: ParamStore,
    enc_in: Conv2d,
    enc: Vec<Stage>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec: Vec<Stage>,
    dec_out: Conv2d,
}

impl Codec {
    pub fn new(config: CodecConfig, mel: MelConfig, seed: u64, device: &Device) -> Result<Self> {
        let store = ParamStore::new(DType::F32, device);
        Self::build(config, mel, CodecStats::default(), store, seed)
    }

    fn build(config: CodecConfig, mel: MelConfig, stats: CodecStats, store: ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        config.latent_shape(mel.n_mels, 1)?;
        let pb = ParamBuilder::new(&store, seed);
        let n = config.stages();
        let w0 = config.width(0);
        let enc_in = Conv2d::new(&pb.pp("enc_in"), 1, w0, 3, 1, 1)?;
        let mut enc = Vec::new();
        for s in 0..n {
            let p = pb.pp(format!("enc{s}"));
            let (ci, co) = (config.width(s), config.width(s + 1));
            enc.push(Stage { a: Conv2d::new(&p.pp("down"), ci, co, 3, 2, 1)?, b: Conv2d::new(&p.pp("conv"), co, co, 3, 1, 1)? });
        }
        let wn = config.width(n);
        let enc_out = Conv2d::new(&pb.pp("enc_out"), wn, 2 * config.channels, 3, 1, 1)?;
        let dec_in = Conv2d::new(&pb.pp("dec_in"), config.channels, wn, 3, 1, 1)?;
        let mut dec = Vec::new();
        for s in (0..n).rev() {
            let p = pb.pp(format!("dec{s}"));
            let (ci, co) = (config.width(s + 1), config.width(s));
            dec.push(Stage { a: Conv2d::new(&p.pp("up"), ci, co, 3, 1, 1)?, b: Conv2d::new(&p.pp("conv"), co, co, 3, 1, 1)? });
        }
        let dec_out = Conv2d::new(&pb.pp("dec_out"), w0, 1, 3, 1, 1)?;
        Ok(Self { config, stats, mel, store, enc_in, enc, enc_out, dec_in, dec, dec_out })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Normalized, reflect-padded batch `[B, 1, T_pad, F]`.
    pub fn mel_batch(&self, mels: &[&MelSpectrogram]) -> Result<Tensor> {
        let Some(first) = mels.first() else { return Err(Error::EmptyDataset) };
        let frames = first.frames();
        let t_pad = self.config.padded_frames(frames);
        let f = self.mel.n_mels;
        let mut data = Vec::with_capacity(mels.len() * t_pad * f);
        for m in mels {
            if m.n_mels() != f || m.frames() != frames {
                return Err(Error::ShapeMismatch { expected: vec![f, frames], got: vec![m.n_mels(), m.frames()] });
            }
            for t in 0..t_pad {
                let src = reflect_index(t, frames);
                for k in 0..f {
                    data.push(((m.values[[k, src]] as f64 - self.stats.mel_mean) / self.stats.mel_std) as f32);
                }
            }
        }
        Ok(Tensor::from_vec(data, (mels.len(), 1, t_pad, f), self.device())?)
    }

    /// Posterior mean and log-variance for a normalized batch, unscaled.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, _, t, f) = x.dims4()?;
        let r = self.config.compression;
        if t % r != 0 || f % r != 0 {
            return invalid(format!("input {t}x{f} not divisible by r = {r}"));
        }
        let mut h = self.enc_in.forward(x)?.silu()?;
        for s in &self.enc {
            h = s.a.forward(&h)?.silu()?;
            h = (&h + s.b.forward(&h)?.silu()?)?;
        }
        let out = self.enc_out.forward(&h)?;
        let c = self.config.channels;
        let mean = out.narrow(1, 0, c)?;
        let logvar = out.narrow(1, c, c)?.clamp(-20f32, 10f32)?;
        Ok((mean, logvar))
    }

    /// Normalized mel batch from an unscaled latent batch.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.dec_in.forward(z)?.silu()?;
        for s in &self.dec {
            h = crate::nn::layers::upsample_nearest2x(&h)?;
            h = s.a.forward(&h)?.silu()?;
            h = (&h + s.b.forward(&h)?.silu()?)?;
        }
        Ok(self.dec_out.forward(&h)?)
    }

    /// Scaled posterior means `[B, C, T/r, F/r]`.
    pub fn encode_batch(&self, mels: &[&MelSpectrogram]) -> Result<Tensor> {
        let (mean, _) = self.encode_tensor(&self.mel_batch(mels)?)?;
        Ok((mean * self.stats.latent_scale)?)
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<LatentGrid> {
        let z = self.encode_batch(&[mel])?.squeeze(0)?;
        LatentGrid::new(z, mel.frames())
    }

    /// Posterior sample instead of the mean.
    pub fn encode_sampled(&self, mel: &MelSpectrogram, rng: &mut SeededRng) -> Result<LatentGrid> {
        let (mean, logvar) = self.encode_tensor(&self.mel_batch(&[mel])?)?;
        let eps = rng.randn(mean.dims(), mean.dtype(), mean.device())?;
        let z = (mean + (logvar * 0.5)?.exp()?.mul(&eps)?)?;
        LatentGrid::new((z * self.stats.latent_scale)?.squeeze(0)?, mel.frames())
    }

    /// Decodes a scaled latent batch into mels cropped to `frames`.
    pub fn decode_batch(&self, z: &Tensor, frames: usize) -> Result<Vec<MelSpectrogram>> {
        let x = self.decode_tensor(&(z / self.stats.latent_scale)?)?;
        let (b, _, t_pad, f) = x.dims4()?;
        if frames > t_pad {
            return invalid(format!("cannot crop {t_pad} frames to {frames}"));
        }
        let data = x.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let mut m = Array2::<f32>::zeros((f, frames));
            for t in 0..frames {
                for k in 0..f {
                    let v = data[(i * t_pad + t) * f + k] as f64;
                    m[[k, t]] = (v * self.stats.mel_std + self.stats.mel_mean) as f32;
                }
            }
            out.push(MelSpectrogram::new(m, self.mel.clone())?);
        }
        Ok(out)
    }

    pub fn decode(&self, z: &LatentGrid) -> Result<MelSpectrogram> {
        let mut v = self.decode_batch(&z.values.unsqueeze(0)?, z.frames)?;
        Ok(v.remove(0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({ "codec": self.config, "stats": self.stats, "mel": self.mel });
        Ok(Checkpoint::new(CHECKPOINT_KIND, config, self.store.snapshot()?))
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a codec checkpoint, found {}", ck.kind)));
        }
        let config: CodecConfig = serde_json::from_value(ck.config["codec"].clone())?;
        let stats: CodecStats = serde_json::from_value(ck.config["stats"].clone())?;
        let mel: MelConfig = serde_json::from_value(ck.config["mel"].clone())?;
        let store = ParamStore::from_tensors(ck.tensors.clone(), DType::F32, device)?;
        let codec = Self::build(config, mel, stats, store.clone(), 0)?;
        if store.names().len() != ck.tensors.len() {
            return Err(Error::Checkpoint("codec checkpoint has unexpected tensors".into()));
        }
        Ok(codec)
    }
}

fn reflect_index(t: usize, n: usize) -> usize {
    if t < n {
        return t;
    }
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = t % period;
    if m < n {
        m
    } else {
        period - m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 4, lr: 2e-3 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CodecReport {
    /// Mean total loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean KL term (before the beta weight) per epoch.
    pub epoch_kl: Vec<f64>,
}

/// Mean over elements of KL(N(mean, exp(logvar)) || N(0, 1)).
pub fn kl_term(mean: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let kl = ((mean.sqr()? + logvar.exp()?)? - 1.0)?.sub(logvar)?;
    Ok((kl.mean_all()? * 0.5)?)
}

/// Fits the codec to `mels` with L1 reconstruction plus beta-weighted KL,
/// then estimates normalization statistics. `on_epoch` runs after every
/// epoch (used for checkpointing).
pub fn train_codec(
    mels: &[MelSpectrogram],
    config: CodecConfig,
    train: &CodecTrainConfig,
    seed: u64,
    device: &Device,
    mut on_epoch: impl FnMut(usize, &Codec) -> Result<()>,
) -> Result<(Codec, CodecReport)> {
    if mels.is_empty() {
        return invalid("codec training needs a non-empty dataset");
    }
    let mel_cfg = mels[0].config.clone();
    let mut codec = Codec::new(config, mel_cfg, seed, device)?;
    let n_vals: usize = mels.iter().map(|m| m.values.len()).sum();
    let mean = mels.iter().flat_map(|m| m.values.iter()).map(|&v| v as f64).sum::<f64>() / n_vals as f64;
    let var = mels.iter().flat_map(|m| m.values.iter()).map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n_vals as f64;
    codec.stats = CodecStats { mel_mean: mean, mel_std: var.sqrt().max(1e-6), latent_scale: 1.0 };

    let mut rng = SeededRng::new(seed).fork(1);
    let mut opt = adamw(codec.store.vars(), train.lr, 0.0)?;
    let mut report = CodecReport::default();
    let mut step = 0usize;
    for epoch in 0..train.epochs {
        let (mut total, mut kl_sum, mut count) = (0.0, 0.0, 0usize);
        for batch in epoch_batches(mels.len(), train.batch_size, &mut rng) {
            let refs: Vec<&MelSpectrogram> = batch.iter().map(|&i| &mels[i]).collect();
            let x = codec.mel_batch(&refs)?;
            let (mu, logvar) = codec.encode_tensor(&x)?;
            let eps = rng.randn(mu.dims(), mu.dtype(), device)?;
            let z = (&mu + (&logvar * 0.5)?.exp()?.mul(&eps)?)?;
            let recon = codec.decode_tensor(&z)?;
            let l1 = (recon - &x)?.abs()?.mean_all()?;
            let kl = kl_term(&mu, &logvar)?;
            let loss = if codec.config.beta > 0.0 { (&l1 + (&kl * codec.config.beta)?)? } else { l1.clone() };
            let lv = finite_scalar(&loss, step, "codec loss")?;
            opt.backward_step(&loss)?;
            total += lv * batch.len() as f64;
            kl_sum += finite_scalar(&kl, step, "codec kl")? * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        report.epoch_loss.push(total / count as f64);
        report.epoch_kl.push(kl_sum / count as f64);
        on_epoch(epoch, &codec)?;
    }
    codec.stats.latent_scale = estimate_latent_scale(&codec, mels)?;
    Ok((codec, report))
}

/// Inverse standard deviation of the unscaled posterior means.
pub fn estimate_latent_scale(codec: &Codec, mels: &[MelSpectrogram]) -> Result<f64> {
    let mut vals = Vec::new();
    for chunk in mels.chunks(8) {
        let refs: Vec<&MelSpectrogram> = chunk.iter().collect();
        let (mu, _) = codec.encode_tensor(&codec.mel_batch(&refs)?)?;
        vals.extend(mu.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
    Ok(1.0 / var.sqrt().max(1e-6))
}

/// Per-channel means of a latent batch `[B, C, H, W]`.
pub fn channel_means(z: &Tensor) -> Result<Vec<f64>> {
    Ok(z.mean(D::Minus1)?.mean(D::Minus1)?.mean(0)?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}
