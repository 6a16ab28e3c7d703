//! Multi-resolution log-mel distance and feature matching.

use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::discriminators::DiscOutput;
use crate::dsp::stft::hann_window;
use crate::dsp::{MelConfig, Waveform};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MelResolution {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl MelResolution {
    pub fn desk_set() -> Vec<Self> {
        vec![
            Self { n_fft: 256, hop: 64, n_mels: 32 },
            Self { n_fft: 512, hop: 128, n_mels: 48 },
            Self { n_fft: 1024, hop: 256, n_mels: 64 },
        ]
    }

    pub fn mel_config(&self, sample_rate: u32) -> MelConfig {
        MelConfig { window_size: self.n_fft, hop: self.hop, n_mels: self.n_mels, sample_rate, log_floor: 1e-5 }
    }
}

/// Differentiable log-mel front end: windowed DFT as a convolution, then
/// the same filterbank and floor as the reference mel path.
pub struct ConvMel {
    pub resolution: MelResolution,
    basis: Tensor,
    filterbank: Tensor,
    floor: f64,
}

impl ConvMel {
    pub fn new(res: MelResolution, sample_rate: u32, device: &Device) -> Result<Self> {
        let cfg = res.mel_config(sample_rate);
        cfg.validate()?;
        let n = res.n_fft;
        let bins = n / 2 + 1;
        let win = hann_window(n);
        let mut basis = vec![0f32; 2 * bins * n];
        for k in 0..bins {
            for i in 0..n {
                let ph = 2.0 * PI * (k * i) as f64 / n as f64;
                basis[k * n + i] = (win[i] * ph.cos()) as f32;
                basis[(bins + k) * n + i] = (-win[i] * ph.sin()) as f32;
            }
        }
        let fb = cfg.filterbank();
        let fb: Vec<f32> = fb.iter().map(|&v| v as f32).collect();
        Ok(Self {
            resolution: res,
            basis: Tensor::from_vec(basis, (2 * bins, 1, n), device)?,
            filterbank: Tensor::from_vec(fb, (res.n_mels, bins), device)?,
            floor: cfg.log_floor,
        })
    }

    /// Natural-log mel `[B, n_mels, L / hop]` of `[B, 1, L]`.
    pub fn log_mel(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, l) = x.dims3()?;
        let n = self.resolution.n_fft;
        let bins = n / 2 + 1;
        let frames = l / self.resolution.hop;
        let y = x.pad_with_zeros(2, n / 2, n / 2)?.conv1d(&self.basis, 0, self.resolution.hop, 1, 1)?;
        let y = y.narrow(2, 0, frames)?;
        let mag = (y.narrow(1, 0, bins)?.sqr()? + y.narrow(1, bins, bins)?.sqr()?)?.affine(1.0, 1e-12)?.sqrt()?;
        let mel = self.filterbank.broadcast_left(b)?.matmul(&mag)?;
        Ok(mel.maximum(self.floor)?.log()?)
    }
}

pub struct MultiScaleMel {
    pub scales: Vec<ConvMel>,
}

impl MultiScaleMel {
    pub fn new(resolutions: &[MelResolution], sample_rate: u32, device: &Device) -> Result<Self> {
        if resolutions.is_empty() {
            return invalid("need at least one mel resolution");
        }
        Ok(Self { scales: resolutions.iter().map(|r| ConvMel::new(*r, sample_rate, device)).collect::<Result<_>>()? })
    }
}

/// Mean over resolutions of the mean absolute log-mel difference.
pub fn msmel_loss(a: &Tensor, b: &Tensor, mel: &MultiScaleMel) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch { expected: a.dims().to_vec(), got: b.dims().to_vec() });
    }
    let mut total: Option<Tensor> = None;
    for s in &mel.scales {
        let d = (s.log_mel(a)? - s.log_mel(b)?)?.abs()?.mean_all()?;
        total = Some(match total {
            None => d,
            Some(t) => (t + d)?,
        });
    }
    Ok((total.unwrap() / mel.scales.len() as f64)?)
}

pub fn msmel_loss_waveforms(a: &Waveform, b: &Waveform, resolutions: &[MelResolution]) -> Result<f64> {
    if a.len() != b.len() || a.sample_rate() != b.sample_rate() {
        return invalid("waveforms differ in length or rate");
    }
    let mel = MultiScaleMel::new(resolutions, a.sample_rate(), &Device::Cpu)?;
    let ta = Tensor::from_vec(a.samples().to_vec(), (1, 1, a.len()), &Device::Cpu)?;
    let tb = Tensor::from_vec(b.samples().to_vec(), (1, 1, b.len()), &Device::Cpu)?;
    Ok(msmel_loss(&ta, &tb, &mel)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Sum over layers of the mean absolute difference of matched features.
pub fn feature_matching_loss(real: &DiscOutput, fake: &DiscOutput) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (fr, ff) in real.features.iter().zip(&fake.features) {
        for (r, f) in fr.iter().zip(ff) {
            let d = (r.detach() - f)?.abs()?.mean_all()?;
            total = Some(match total {
                None => d,
                Some(t) => (t + d)?,
            });
        }
    }
    total.ok_or_else(|| Error::InvalidArgument("no discriminator features".into()))
}

/// Least-squares generator loss: sum of mean (1 - D(fake))^2.
pub fn generator_adv_loss(fake: &DiscOutput) -> Result<Tensor> {
    let mut total = Tensor::zeros((), fake.scores[0].dtype(), fake.scores[0].device())?;
    for s in &fake.scores {
        total = (total + (s - 1.0)?.sqr()?.mean_all()?)?;
    }
    Ok(total)
}

/// Least-squares discriminator loss: sum of mean (1 - D(real))^2 + mean D(fake)^2.
pub fn discriminator_loss(real: &DiscOutput, fake: &DiscOutput) -> Result<Tensor> {
    let mut total = Tensor::zeros((), real.scores[0].dtype(), real.scores[0].device())?;
    for (r, f) in real.scores.iter().zip(&fake.scores) {
        total = ((total + (r - 1.0)?.sqr()?.mean_all()?)? + f.sqr()?.mean_all()?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel_spectrogram;

    fn wave(seed: u64, n: usize) -> Waveform {
        let v = crate::rng::SeededRng::new(seed).normal_vec(n);
        Waveform::new(v.iter().enumerate().map(|(i, x)| (0.3 * x + (i as f64 * 0.05).sin()) as f32).collect(), 16000).unwrap()
    }

    #[test]
    fn matches_reference_mel_path() {
        let a = wave(1, 4096);
        let b = wave(2, 4096);
        let res = [MelResolution { n_fft: 256, hop: 64, n_mels: 32 }, MelResolution { n_fft: 512, hop: 128, n_mels: 48 }];
        let got = msmel_loss_waveforms(&a, &b, &res).unwrap();
        let mut want = 0.0;
        for r in &res {
            let cfg = r.mel_config(16000);
            let ma = mel_spectrogram(&a, &cfg).unwrap().values;
            let mb = mel_spectrogram(&b, &cfg).unwrap().values;
            want += ma.iter().zip(mb.iter()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / ma.len() as f64;
        }
        want /= res.len() as f64;
        assert!((got - want).abs() < 1e-4 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn zero_for_equal_and_symmetric() {
        let a = wave(3, 2048);
        let b = wave(4, 2048);
        let res = MelResolution::desk_set();
        assert_eq!(msmel_loss_waveforms(&a, &a, &res).unwrap(), 0.0);
        let ab = msmel_loss_waveforms(&a, &b, &res).unwrap();
        let ba = msmel_loss_waveforms(&b, &a, &res).unwrap();
        assert!((ab - ba).abs() < 1e-7 && ab > 0.0);
    }

    #[test]
    fn feature_matching_zero_for_identical() {
        let f = Tensor::new(&[1f32, 2.0], &Device::Cpu).unwrap();
        let o = DiscOutput { scores: vec![f.clone()], features: vec![vec![f.clone(), f.clone()]] };
        assert_eq!(feature_matching_loss(&o, &o).unwrap().to_scalar::<f32>().unwrap(), 0.0);
        let g = DiscOutput { scores: vec![f.clone()], features: vec![vec![(&f + 1.0).unwrap(), f.clone()]] };
        assert_eq!(feature_matching_loss(&o, &g).unwrap().to_scalar::<f32>().unwrap(), 1.0);
    }
}
