//! Stage orchestration: paired-data preparation, the four training stages
//! and end-to-end inference from a band-limited waveform.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{train_codec, Codec, CodecConfig, CodecReport, CodecTrainConfig};
use crate::denoiser::{apply_lora, train_teacher, Denoiser, DenoiserConfig, LatentPairs, TeacherTrainConfig};
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig, Solver};
use crate::distill::{one_step_sample, DistillConfig, DistillState, LossReport};
use crate::dsp::filter::{FilterSpec, LowpassSimConfig};
use crate::dsp::{mel_spectrogram, simulate_lr, MelConfig, MelSpectrogram, Waveform};
use crate::error::{invalid, Error, Result};
use crate::eval::{desk_cutoffs, paper_cutoffs, EvalItem, MetricConfig};
use crate::nn::LoraConfig;
use crate::rng::SeededRng;
use crate::vocoder::{generate_waveform, train_vocoder, Generator, VocoderConfig, VocoderExample, VocoderTrainConfig, VocoderTrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => invalid(format!("unknown profile `{other}` (expected paper or desk)")),
        }
    }
}

/// Every module configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mel: MelConfig,
    pub simulation: LowpassSimConfig,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub denoiser: DenoiserConfig,
    pub teacher_train: TeacherTrainConfig,
    pub teacher_sampler: SamplerConfig,
    pub lora: LoraConfig,
    pub distill: DistillConfig,
    pub vocoder: VocoderConfig,
    pub vocoder_train: VocoderTrainConfig,
    pub metric: MetricConfig,
    pub cutoffs: Vec<f64>,
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                mel: MelConfig::paper(),
                simulation: LowpassSimConfig::paper(),
                codec: CodecConfig::paper(),
                codec_train: CodecTrainConfig::default(),
                denoiser: DenoiserConfig::paper(),
                teacher_train: TeacherTrainConfig::default(),
                teacher_sampler: SamplerConfig { steps: 100, omega: 4.0, solver: Solver::Ddim },
                lora: LoraConfig::default(),
                distill: DistillConfig::paper(),
                vocoder: VocoderConfig::paper(),
                vocoder_train: VocoderTrainConfig::paper(),
                metric: MetricConfig::paper(),
                cutoffs: paper_cutoffs(),
            },
            Profile::Desk => Self {
                mel: MelConfig::desk(),
                simulation: LowpassSimConfig::desk(),
                codec: CodecConfig::desk(),
                codec_train: CodecTrainConfig::default(),
                denoiser: DenoiserConfig::desk(),
                teacher_train: TeacherTrainConfig::default(),
                teacher_sampler: SamplerConfig { steps: 100, omega: 4.0, solver: Solver::Ddim },
                lora: LoraConfig::default(),
                distill: DistillConfig::desk(),
                vocoder: VocoderConfig::desk(),
                vocoder_train: VocoderTrainConfig::desk(),
                metric: MetricConfig::desk(),
                cutoffs: desk_cutoffs(),
            },
        }
    }

    /// Cross-module consistency on top of each module's own checks.
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.simulation.validate(self.mel.sample_rate)?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.distill.validate()?;
        self.vocoder.validate()?;
        if self.codec.channels != self.denoiser.latent_channels {
            return invalid(format!(
                "codec.channels = {} but denoiser.latent_channels = {}",
                self.codec.channels, self.denoiser.latent_channels
            ));
        }
        if self.vocoder.hop() != self.mel.hop {
            return invalid(format!("vocoder upsampling {} differs from mel.hop {}", self.vocoder.hop(), self.mel.hop));
        }
        if self.vocoder.n_mels != self.mel.n_mels {
            return invalid(format!("vocoder.n_mels = {} but mel.n_mels = {}", self.vocoder.n_mels, self.mel.n_mels));
        }
        if self.mel.n_mels % self.codec.compression != 0 {
            return invalid("mel.n_mels must be divisible by codec.compression");
        }
        let nyq = self.mel.sample_rate as f64 / 2.0;
        if let Some(c) = self.cutoffs.iter().find(|&&c| !(c > 0.0 && c < nyq)) {
            return invalid(format!("cutoff {c} Hz outside (0, {nyq})"));
        }
        Ok(())
    }
}

/// A full-band clip, its simulated degradation and both mels.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub id: String,
    pub category: String,
    pub hr: Waveform,
    pub lr: Waveform,
    pub filter: FilterSpec,
    pub mel_h: MelSpectrogram,
    pub mel_l: MelSpectrogram,
}

/// Per-item generator so that an item's filter does not depend on its
/// position among other items' draws.
pub fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
}

/// Crops each clip to whole mel hops and simulates its low-resolution
/// counterpart with a filter drawn from `cfg.simulation`.
pub fn prepare_pairs(items: &[EvalItem], cfg: &PipelineConfig, seed: u64) -> Result<Vec<TrainingPair>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            if item.audio.sample_rate() != cfg.mel.sample_rate {
                return invalid(format!(
                    "{} is at {} Hz, profile expects {} Hz",
                    item.id,
                    item.audio.sample_rate(),
                    cfg.mel.sample_rate
                ));
            }
            let frames = item.audio.len() / cfg.mel.hop;
            if frames == 0 {
                return invalid(format!("{} is shorter than one hop", item.id));
            }
            let hr = item.audio.fit_to_len(frames * cfg.mel.hop)?;
            let (lr, filter) = simulate_lr(&hr, &cfg.simulation, &mut item_rng(seed, i))?;
            Ok(TrainingPair {
                id: item.id.clone(),
                category: item.category.clone(),
                mel_h: mel_spectrogram(&hr, &cfg.mel)?,
                mel_l: mel_spectrogram(&lr, &cfg.mel)?,
                hr,
                lr,
                filter,
            })
        })
        .collect()
}

/// Codec fitted to both the full-band and degraded mels.
pub fn train_codec_stage(
    pairs: &[TrainingPair],
    cfg: &PipelineConfig,
    seed: u64,
    device: &Device,
    on_epoch: impl FnMut(usize, &Codec) -> Result<()>,
) -> Result<(Codec, CodecReport)> {
    let mels: Vec<MelSpectrogram> = pairs.iter().flat_map(|p| [p.mel_h.clone(), p.mel_l.clone()]).collect();
    train_codec(&mels, cfg.codec.clone(), &cfg.codec_train, seed, device, on_epoch)
}

/// Encodes every pair; all clips must share one length.
pub fn latent_pairs(codec: &Codec, pairs: &[TrainingPair]) -> Result<LatentPairs> {
    let Some(first) = pairs.first() else { return Err(Error::EmptyDataset) };
    if let Some(p) = pairs.iter().find(|p| p.mel_h.frames() != first.mel_h.frames()) {
        return invalid(format!("{} has {} frames, expected {}", p.id, p.mel_h.frames(), first.mel_h.frames()));
    }
    let (mut zh, mut zl) = (Vec::new(), Vec::new());
    for chunk in pairs.chunks(8) {
        zh.push(codec.encode_batch(&chunk.iter().map(|p| &p.mel_h).collect::<Vec<_>>())?);
        zl.push(codec.encode_batch(&chunk.iter().map(|p| &p.mel_l).collect::<Vec<_>>())?);
    }
    LatentPairs::new(Tensor::cat(&zh, 0)?, Tensor::cat(&zl, 0)?)
}

pub fn train_teacher_stage(
    data: &LatentPairs,
    cfg: &PipelineConfig,
    seed: u64,
    device: &Device,
    on_step: impl FnMut(usize, f64, &Denoiser) -> Result<()>,
) -> Result<(Denoiser, Vec<f64>)> {
    let net = Denoiser::new(cfg.denoiser.clone(), seed, device)?;
    let losses = train_teacher(&net, data, &NoiseSchedule::default(), &cfg.teacher_train, seed, on_step)?;
    Ok((net, losses))
}

/// LoRA student distilled from a frozen copy of `teacher`.
pub fn distill_stage(
    teacher: &Denoiser,
    data: &LatentPairs,
    cfg: &PipelineConfig,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&LossReport, &Denoiser) -> Result<()>,
) -> Result<(Denoiser, Vec<LossReport>)> {
    let student = apply_lora(teacher, &cfg.lora, seed)?;
    let mut state = DistillState::new(student, teacher.frozen()?, cfg.codec.channels, cfg.distill.clone(), seed)?;
    let reports = state.run(data, steps, |r, st| on_step(r, &st.student))?;
    Ok((state.student, reports))
}

pub fn vocoder_examples(pairs: &[TrainingPair]) -> Vec<VocoderExample> {
    pairs
        .iter()
        .map(|p| VocoderExample { mel: p.mel_h.clone(), lr: p.lr.clone(), target: p.hr.clone() })
        .collect()
}

pub fn train_vocoder_stage(
    pairs: &[TrainingPair],
    cfg: &PipelineConfig,
    seed: u64,
    device: &Device,
    on_step: impl FnMut(usize, f64, &Generator) -> Result<()>,
) -> Result<(Generator, VocoderTrainReport)> {
    train_vocoder(&vocoder_examples(pairs), cfg.vocoder.clone(), &cfg.vocoder_train, seed, device, on_step)
}

/// How the latent generator is run at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Single evaluation at t = 1.
    OneStep,
    /// Multi-step guided ODE integration.
    Solver(SamplerConfig),
}

impl Sampling {
    pub fn nfe(&self) -> usize {
        match self {
            Sampling::OneStep => 1,
            Sampling::Solver(c) => c.nfe(true),
        }
    }
}

/// Codec, latent generator and vocoder assembled for inference.
pub struct FlashSr {
    pub mel: MelConfig,
    pub codec: Codec,
    pub generator: Denoiser,
    pub vocoder: Generator,
    pub sampling: Sampling,
    pub schedule: NoiseSchedule,
}

impl FlashSr {
    pub fn new(mel: MelConfig, codec: Codec, generator: Denoiser, vocoder: Generator, sampling: Sampling) -> Self {
        Self { mel, codec, generator, vocoder, sampling, schedule: NoiseSchedule::default() }
    }

    /// Predicted full-band mel for a low-resolution waveform.
    pub fn generate_mel(&self, lr: &Waveform, rng: &mut SeededRng) -> Result<MelSpectrogram> {
        let mel_l = mel_spectrogram(lr, &self.mel)?;
        let z_l = self.codec.encode_batch(&[&mel_l])?;
        let noise = rng.randn(z_l.dims(), z_l.dtype(), z_l.device())?;
        let z = match self.sampling {
            Sampling::OneStep => one_step_sample(&self.generator, &self.schedule, &noise, &z_l)?,
            Sampling::Solver(c) => sample(&self.generator, &self.schedule, &noise, Some(&z_l), &c)?,
        };
        Ok(self.codec.decode_batch(&z, mel_l.frames())?.remove(0))
    }

    /// Full-band waveform with the length and rate of `lr`.
    pub fn infer(&self, lr: &Waveform, rng: &mut SeededRng) -> Result<Waveform> {
        if lr.sample_rate() != self.mel.sample_rate {
            return invalid(format!("input at {} Hz, model expects {} Hz", lr.sample_rate(), self.mel.sample_rate));
        }
        let frames = lr.len() / self.mel.hop;
        if frames == 0 {
            return invalid("input shorter than one hop");
        }
        let cropped = lr.fit_to_len(frames * self.mel.hop)?;
        let mel = self.generate_mel(&cropped, rng)?;
        generate_waveform(&self.vocoder, &mel, &cropped)?.fit_to_len(lr.len())
    }
}
