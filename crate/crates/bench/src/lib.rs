//! Shared fixtures for the benchmarks.

use candle_core::{DType, Device, Tensor};
use flashsr_core::corpus::{synth_clip, Category};
use flashsr_core::denoiser::{apply_lora, Denoiser, DenoiserConfig};
use flashsr_core::dsp::{MelConfig, Waveform};
use flashsr_core::nn::LoraConfig;
use flashsr_core::rng::SeededRng;

/// Desk teacher, its merged zero-adapter student, and a latent condition
/// shaped like a one-second clip.
pub struct SamplingFixture {
    pub teacher: Denoiser,
    pub student: Denoiser,
    pub cond: Tensor,
    pub noise: Tensor,
}

pub fn sampling_fixture() -> flashsr_core::Result<SamplingFixture> {
    let dev = Device::Cpu;
    let teacher = Denoiser::new(DenoiserConfig::desk(), 0, &dev)?;
    let student = apply_lora(&teacher, &LoraConfig::default(), 1)?.merged()?;
    let mut rng = SeededRng::new(2);
    // 100 mel frames padded to 104, compression 8, 64 mel bins.
    let cond = rng.randn((1, 16, 13, 8), DType::F32, &dev)?;
    let noise = rng.randn((1, 16, 13, 8), DType::F32, &dev)?;
    Ok(SamplingFixture { teacher, student, cond, noise })
}

pub fn one_second_clip() -> flashsr_core::Result<(Waveform, MelConfig)> {
    Ok((synth_clip(Category::Music, 0, 16000, 16000)?, MelConfig::desk()))
}
