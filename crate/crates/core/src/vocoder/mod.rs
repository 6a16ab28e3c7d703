//! Waveform generator conditioned on a mel-spectrogram and on the
//! band-limited input waveform, with its discriminators and losses.

pub mod amp;
pub mod discriminators;
pub mod losses;
pub mod train;

use candle_core::{DType, Device, Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::{MelSpectrogram, Waveform};
use crate::error::{invalid, Error, Result};
use crate::nn::layers::{leaky_relu, upsample_nearest1d, Conv1d};
use crate::nn::{Checkpoint, ParamBuilder, ParamStore};
use amp::AmpBlock;

pub use discriminators::{CqtConfig, CqtDiscriminator, DiscOutput, MultiPeriodDiscriminator};
pub use losses::{feature_matching_loss, msmel_loss, msmel_loss_waveforms, MelResolution};
pub use train::{train_vocoder, VocoderExample, VocoderTrainConfig, VocoderTrainReport};

pub const CHECKPOINT_KIND: &str = "vocoder";

/// Depthwise convolution of `[B, C, L]` with one fixed filter `[1, 1, K]`
/// shared by all channels; output length `L / stride`.
pub(crate) fn conv1d_depthwise_fixed(x: &Tensor, taps: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, c, l) = x.dims3()?;
    let k = taps.dim(2)?;
    let left = if stride == 1 { k / 2 } else { k / 2 - 1 };
    let right = k - 1 - left;
    let flat = x.reshape((b * c, 1, l))?.pad_with_zeros(2, left, right)?;
    let y = flat.conv1d(taps, 0, stride, 1, 1)?;
    let out_len = y.dim(2)?;
    Ok(y.reshape((b, c, out_len))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderConfig {
    pub n_mels: usize,
    /// Per-stage upsampling; the product is the mel hop.
    pub upsample_factors: Vec<usize>,
    pub initial_channels: usize,
    pub min_channels: usize,
    pub kernel: usize,
    pub amp_dilations: Vec<usize>,
    pub mpd_periods: Vec<usize>,
    pub cqt: CqtConfig,
}

impl VocoderConfig {
    pub fn desk() -> Self {
        Self {
            n_mels: 64,
            upsample_factors: vec![5, 4, 4, 2],
            initial_channels: 64,
            min_channels: 8,
            kernel: 7,
            amp_dilations: vec![1, 3],
            mpd_periods: vec![2, 3, 5, 7, 11],
            cqt: CqtConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            n_mels: 256,
            upsample_factors: vec![5, 4, 3, 2, 2, 2],
            initial_channels: 1536,
            min_channels: 24,
            kernel: 7,
            amp_dilations: vec![1, 3, 5],
            mpd_periods: vec![2, 3, 5, 7, 11],
            cqt: CqtConfig::paper(),
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    /// Channel width after stage k.
    pub fn stage_channels(&self, k: usize) -> usize {
        (self.initial_channels >> (k + 1)).max(self.min_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.upsample_factors.is_empty() || self.upsample_factors.contains(&0) {
            return invalid("upsample factors must be positive");
        }
        if self.kernel % 2 == 0 {
            return invalid("vocoder kernel must be odd");
        }
        if self.mpd_periods.contains(&0) {
            return invalid("MPD periods must be positive");
        }
        Ok(())
    }
}

/// Strided 1-D convolutions over the input waveform producing one feature
/// map per generator stage, matching that stage's shape.
pub struct LrEncoder {
    conv_in: Conv1d,
    proj_last: Conv1d,
    downs: Vec<Conv1d>,
}

impl LrEncoder {
    pub fn new(pb: &ParamBuilder, cfg: &VocoderConfig) -> Result<Self> {
        let n = cfg.upsample_factors.len();
        let c_last = cfg.stage_channels(n - 1);
        let conv_in = Conv1d::new(&pb.pp("conv_in"), 1, c_last, cfg.kernel, 1, 1)?;
        let proj_last = Conv1d::new(&pb.pp("proj3"), c_last, c_last, cfg.kernel, 1, 1)?;
        let mut downs = Vec::new();
        // downs[k] maps stage k+1 features to stage k features.
        for k in 0..n - 1 {
            let f = cfg.upsample_factors[k + 1];
            let conv = Conv1d::new(&pb.pp(format!("down{k}")), cfg.stage_channels(k + 1), cfg.stage_channels(k), 2 * f + 1, f, 1)?
                .with_padding(f);
            downs.push(conv);
        }
        Ok(Self { conv_in, proj_last, downs })
    }

    /// Features for stages 0..n, lowest rate first.
    pub fn forward(&self, lr: &Tensor) -> Result<Vec<Tensor>> {
        let n = self.downs.len() + 1;
        let mut feats = vec![None; n];
        let h = leaky_relu(&self.conv_in.forward(lr)?, 0.1)?;
        feats[n - 1] = Some(self.proj_last.forward(&h)?);
        let mut h = h;
        for k in (0..n - 1).rev() {
            h = leaky_relu(&self.downs[k].forward(&h)?, 0.1)?;
            feats[k] = Some(h.clone());
        }
        Ok(feats.into_iter().map(|f| f.unwrap()).collect())
    }
}

pub struct Generator {
    pub config: VocoderConfig,
    store: ParamStore,
    conv_pre: Conv1d,
    ups: Vec<Conv1d>,
    amps: Vec<AmpBlock>,
    post_act: amp::AntiAliasedSnake,
    conv_post: Conv1d,
    pub lr_encoder: LrEncoder,
}

impl Generator {
    pub fn new(config: VocoderConfig, seed: u64, device: &Device) -> Result<Self> {
        let store = ParamStore::new(DType::F32, device);
        Self::build(config, store, seed)
    }

    fn build(config: VocoderConfig, store: ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let pb = ParamBuilder::new(&store, seed);
        let conv_pre = Conv1d::new(&pb.pp("conv_pre"), config.n_mels, config.initial_channels, config.kernel, 1, 1)?;
        let mut ups = Vec::new();
        let mut amps = Vec::new();
        let mut c_in = config.initial_channels;
        for k in 0..config.upsample_factors.len() {
            let c = config.stage_channels(k);
            ups.push(Conv1d::new(&pb.pp(format!("up{k}")), c_in, c, config.kernel, 1, 1)?);
            amps.push(AmpBlock::new(&pb.pp(format!("amp{k}")), c, 3, &config.amp_dilations)?);
            c_in = c;
        }
        let post_act = amp::AntiAliasedSnake::new(&pb.pp("post_act"), c_in)?;
        let conv_post = Conv1d::new(&pb.pp("conv_post"), c_in, 1, config.kernel, 1, 1)?;
        let lr_encoder = LrEncoder::new(&pb.pp("lr"), &config)?;
        Ok(Self { config, store, conv_pre, ups, amps, post_act, conv_post, lr_encoder })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// `mel` is `[B, n_mels, T]`; `lr_feats` (one per stage) are added before
    /// each stage's AMP block. Output `[B, 1, T * hop]`.
    pub fn forward_with_features(&self, mel: &Tensor, lr_feats: Option<&[Tensor]>) -> Result<Tensor> {
        let mut h = self.conv_pre.forward(mel)?;
        for (k, (&f, (up, amp))) in self.config.upsample_factors.iter().zip(self.ups.iter().zip(&self.amps)).enumerate() {
            h = up.forward(&upsample_nearest1d(&leaky_relu(&h, 0.1)?, f)?)?;
            if let Some(feats) = lr_feats {
                if feats[k].dims() != h.dims() {
                    return Err(Error::ShapeMismatch { expected: h.dims().to_vec(), got: feats[k].dims().to_vec() });
                }
                h = (h + &feats[k])?;
            }
            h = amp.forward(&h)?;
        }
        let y = self.conv_post.forward(&self.post_act.forward(&h)?)?;
        Ok(y.tanh()?)
    }

    /// `lr` is `[B, 1, T * hop]`.
    pub fn forward(&self, mel: &Tensor, lr: &Tensor) -> Result<Tensor> {
        let (_, _, t) = mel.dims3()?;
        let (_, _, n) = lr.dims3()?;
        if n != t * self.config.hop() {
            return invalid(format!("input waveform has {n} samples, expected {} x {t}", self.config.hop()));
        }
        let feats = self.lr_encoder.forward(lr)?;
        self.forward_with_features(mel, Some(&feats))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(CHECKPOINT_KIND, serde_json::to_value(&self.config)?, self.store.snapshot()?))
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a vocoder checkpoint, found {}", ck.kind)));
        }
        let config: VocoderConfig = ck.config_as()?;
        let store = ParamStore::from_tensors(ck.tensors.clone(), DType::F32, device)?;
        let n = store.names().len();
        let g = Self::build(config, store, 0)?;
        if g.store.names().len() != n {
            return Err(Error::Checkpoint("vocoder checkpoint is missing tensors".into()));
        }
        Ok(g)
    }
}

/// `[1, n_mels, T]` tensor from a mel spectrogram.
pub fn mel_tensor(mel: &MelSpectrogram, device: &Device) -> Result<Tensor> {
    let v: Vec<f32> = mel.values.iter().copied().collect();
    Ok(Tensor::from_vec(v, (1, mel.n_mels(), mel.frames()), device)?)
}

pub fn wave_tensor(w: &Waveform, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(w.samples().to_vec(), (1, 1, w.len()), device)?)
}

/// Synthesizes `hop * T` samples from a mel and the input waveform, which
/// must already be at the target rate.
pub fn generate_waveform(g: &Generator, mel: &MelSpectrogram, lr: &Waveform) -> Result<Waveform> {
    let hop = g.config.hop();
    if lr.len() != hop * mel.frames() {
        return invalid(format!("input waveform has {} samples, expected {}", lr.len(), hop * mel.frames()));
    }
    if lr.sample_rate() != mel.config.sample_rate {
        return invalid("input waveform must be resampled to the target rate first");
    }
    let y = g.forward(&mel_tensor(mel, g.device())?, &wave_tensor(lr, g.device())?)?;
    Waveform::new(y.flatten_all()?.to_vec1::<f32>()?, lr.sample_rate())
}
