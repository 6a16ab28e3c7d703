//! Log-mel spectrogram front end (HTK mel scale, unit-area triangles).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stft::{frame_count, stft_magnitude};
use super::Waveform;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub window_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl MelConfig {
    /// 48 kHz, 2048-sample Hann window, hop 480, 256 mel channels.
    pub fn paper() -> Self {
        Self { window_size: 2048, hop: 480, n_mels: 256, sample_rate: 48_000, log_floor: 1e-5 }
    }

    /// 16 kHz, 640-sample window, hop 160, 64 mel channels.
    pub fn desk() -> Self {
        Self { window_size: 640, hop: 160, n_mels: 64, sample_rate: 16_000, log_floor: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.window_size < self.hop {
            return invalid(format!("need window_size >= hop > 0, got {} / {}", self.window_size, self.hop));
        }
        if self.n_mels == 0 || self.sample_rate == 0 || self.log_floor <= 0.0 {
            return invalid("n_mels, sample_rate and log_floor must be positive");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn frames(&self, n_samples: usize) -> usize {
        frame_count(n_samples, self.hop)
    }

    /// Center frequency of every mel row, Hz.
    pub fn mel_centers_hz(&self) -> Vec<f64> {
        let points = mel_points_hz(self.n_mels, self.sample_rate as f64 / 2.0);
        points[1..=self.n_mels].to_vec()
    }

    /// Center frequency of every linear STFT row, Hz.
    pub fn bin_centers_hz(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|b| b as f64 * self.sample_rate as f64 / self.window_size as f64).collect()
    }

    /// Triangular filterbank `[n_mels, n_bins]`; every row sums to one.
    pub fn filterbank(&self) -> Array2<f64> {
        let bins = self.bin_centers_hz();
        let points = mel_points_hz(self.n_mels, self.sample_rate as f64 / 2.0);
        let mut fb = Array2::<f64>::zeros((self.n_mels, bins.len()));
        for m in 0..self.n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            for (b, &f) in bins.iter().enumerate() {
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                fb[[m, b]] = w;
            }
            let area: f64 = fb.row(m).sum();
            if area > 0.0 {
                fb.row_mut(m).mapv_inplace(|v| v / area);
            } else {
                // Triangle narrower than the bin spacing: take the nearest bin.
                let nearest = (mid * self.window_size as f64 / self.sample_rate as f64).round() as usize;
                fb[[m, nearest.min(bins.len() - 1)]] = 1.0;
            }
        }
        fb
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn mel_points_hz(n_mels: usize, fmax: f64) -> Vec<f64> {
    let top = hz_to_mel(fmax);
    (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect()
}

/// Natural-log mel spectrogram, `[n_mels, frames]`, every entry at least
/// `ln(log_floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f32>, config: MelConfig) -> Result<Self> {
        if values.nrows() != config.n_mels {
            return invalid(format!("expected {} mel rows, got {}", config.n_mels, values.nrows()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("mel spectrogram contains non-finite values");
        }
        Ok(Self { values, config })
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn floor_value(&self) -> f32 {
        self.config.log_floor.ln() as f32
    }
}

pub fn stft_mag(w: &Waveform, cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    Ok(stft_magnitude(w.samples(), cfg.window_size, cfg.hop))
}

/// Applies the filterbank and floor to a magnitude STFT.
pub fn mel_from_magnitude(mag: &Array2<f64>, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let mel = cfg.filterbank().dot(mag);
    let floor = cfg.log_floor;
    let values = mel.mapv(|v| v.max(floor).ln() as f32);
    MelSpectrogram::new(values, cfg.clone())
}

pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return invalid(format!("waveform at {} Hz, mel config expects {} Hz", w.sample_rate(), cfg.sample_rate));
    }
    mel_from_magnitude(&stft_mag(w, cfg)?, cfg)
}
