//! Desk-scale audio sources: procedurally synthesized clips in three
//! categories, and ingestion of WAV directories.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, resample_sinc, Waveform};
use crate::error::{invalid, Error, Result};
use crate::eval::EvalItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Speech,
    Music,
    Sfx,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Speech, Category::Music, Category::Sfx];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Speech => "speech",
            Category::Music => "music",
            Category::Sfx => "sfx",
        })
    }
}

/// Harmonic stack on a time-varying fundamental. `gain(k, f)` weights
/// harmonic `k` at frequency `f`; partials above Nyquist are dropped.
fn harmonic(f0: &[f64], sr: f64, gain: impl Fn(usize, f64, usize) -> f64) -> Vec<f64> {
    let nyq = 0.5 * sr;
    let mut phase = 0.0;
    let mut out = vec![0.0; f0.len()];
    for (i, &f) in f0.iter().enumerate() {
        phase += 2.0 * PI * f / sr;
        let mut k = 1;
        while k as f64 * f < nyq * 0.98 {
            out[i] += gain(k, k as f64 * f, i) * (k as f64 * phase).sin();
            k += 1;
        }
    }
    out
}

/// First difference, which tilts white noise towards high frequencies.
fn tilt(x: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    x.iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d
        })
        .collect()
}

fn formant_gain(f: f64, formants: &[(f64, f64)]) -> f64 {
    formants.iter().map(|&(c, bw)| (-0.5 * ((f - c) / bw).powi(2)).exp()).sum::<f64>() + 0.02
}

fn speech_like(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.random_range(100.0..220.0);
    let glide = rng.random_range(-0.3..0.3);
    let syl_rate = rng.random_range(3.0..5.5);
    let vowels: Vec<[(f64, f64); 3]> = (0..8)
        .map(|_| {
            [
                (rng.random_range(300.0..900.0), 120.0),
                (rng.random_range(900.0..2500.0), 200.0),
                (rng.random_range(2500.0..4500.0), 400.0),
            ]
        })
        .collect();
    let f0: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            base * (1.0 + glide * t) * (1.0 + 0.03 * (2.0 * PI * 5.0 * t).sin())
        })
        .collect();
    let voiced = harmonic(&f0, sr, |k, f, i| {
        let t = i as f64 / sr;
        let v = &vowels[((t * syl_rate) as usize) % vowels.len()];
        formant_gain(f, v) / (k as f64).sqrt()
    });
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let fric = tilt(&noise);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let ph = (t * syl_rate).fract();
            let env = (PI * ph).sin().powi(2);
            let fenv = (1.0 - env) * 0.15;
            env * voiced[i] + fenv * fric[i]
        })
        .collect()
}

fn music_like(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let notes = rng.random_range(2..5);
    let note_len = n / notes;
    for j in 0..notes {
        let midi: f64 = rng.random_range(45..76) as f64;
        let f = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        let bright = rng.random_range(0.6..1.2);
        let start = j * note_len;
        let len = (n - start).min(note_len + note_len / 2);
        let f0 = vec![f; len];
        let tone = harmonic(&f0, sr, |k, _, _| 1.0 / (k as f64).powf(bright));
        let decay = rng.random_range(2.0..6.0);
        for i in 0..len {
            let t = i as f64 / sr;
            let env = (1.0 - (-t * 200.0).exp()) * (-decay * t).exp();
            out[start + i] += env * tone[i];
        }
    }
    // Hi-hat style ticks.
    let period = (sr * rng.random_range(0.12..0.25)) as usize;
    let ticks: Vec<f64> = tilt(&(0..n).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>());
    for i in 0..n {
        let ph = (i % period) as f64 / sr;
        out[i] += 0.2 * (-ph * 60.0).exp() * ticks[i];
    }
    out
}

fn sfx_like(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f_lo = rng.random_range(200.0..800.0);
    let f_hi = rng.random_range(3000.0..0.45 * sr);
    let sweep = rng.random_range(1.0..3.0);
    let mut phase = 0.0;
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let hiss = tilt(&noise);
    let bursts = rng.random_range(2..6);
    let burst_at: Vec<usize> = (0..bursts).map(|_| rng.random_range(0..n)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let u = (t * sweep).fract();
            let f = f_lo * (f_hi / f_lo).powf(u);
            phase += 2.0 * PI * f / sr;
            let burst: f64 = burst_at
                .iter()
                .filter(|&&b| i >= b)
                .map(|&b| (-((i - b) as f64 / sr) * 25.0).exp())
                .sum();
            0.5 * phase.sin() + 0.4 * burst.min(1.0) * hiss[i] + 0.05 * noise[i]
        })
        .collect()
}

/// One synthetic clip, peak-normalized to 0.5.
pub fn synth_clip(category: Category, seed: u64, n_samples: usize, sample_rate: u32) -> Result<Waveform> {
    if n_samples == 0 {
        return invalid("clip must have at least one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let x = match category {
        Category::Speech => speech_like(n_samples, sr, &mut rng),
        Category::Music => music_like(n_samples, sr, &mut rng),
        Category::Sfx => sfx_like(n_samples, sr, &mut rng),
    };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    Waveform::new(x.iter().map(|v| (0.5 * v / peak) as f32).collect(), sample_rate)
}

/// `count` clips cycling through the categories.
pub fn synthetic_corpus(count: usize, n_samples: usize, sample_rate: u32, seed: u64) -> Result<Vec<EvalItem>> {
    (0..count)
        .map(|i| {
            let category = Category::ALL[i % 3];
            Ok(EvalItem {
                id: format!("{category}-{i:03}"),
                category: category.to_string(),
                audio: synth_clip(category, seed.wrapping_add(i as u64 * 7919), n_samples, sample_rate)?,
            })
        })
        .collect()
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `.wav` under `dir`, resampled to `sample_rate`. The category is
/// the first path component below `dir`, or `"audio"` for top-level files.
pub fn load_wav_dir(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Vec<EvalItem>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    collect_wavs(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            let category = match rel.components().count() {
                0 | 1 => "audio".to_string(),
                _ => rel.components().next().unwrap().as_os_str().to_string_lossy().into_owned(),
            };
            let w = read_wav(p)?;
            let audio = if w.sample_rate() == sample_rate { w } else { resample_sinc(&w, sample_rate)? };
            Ok(EvalItem { id: rel.with_extension("").to_string_lossy().replace('/', "_"), category, audio })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::stft_magnitude;
    use crate::dsp::{write_wav, WavEncoding};

    #[test]
    fn deterministic_and_normalized() {
        for c in Category::ALL {
            let a = synth_clip(c, 3, 8000, 16000).unwrap();
            let b = synth_clip(c, 3, 8000, 16000).unwrap();
            assert_eq!(a.samples(), b.samples());
            let peak = a.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!((peak - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn clips_carry_energy_above_4k() {
        for c in Category::ALL {
            let w = synth_clip(c, 1, 16000, 16000).unwrap();
            let mag = stft_magnitude(w.samples(), 1024, 256);
            let bins = mag.nrows();
            let total: f64 = mag.iter().map(|v| v * v).sum();
            let high: f64 = mag.slice(ndarray::s![bins / 2.., ..]).iter().map(|v| v * v).sum();
            assert!(high / total > 1e-3, "{c}: {}", high / total);
        }
    }

    #[test]
    fn wav_dir_ingest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("music")).unwrap();
        let w = synth_clip(Category::Music, 0, 4410, 44100).unwrap();
        write_wav(dir.path().join("music/a.wav"), &w, WavEncoding::Float32).unwrap();
        write_wav(dir.path().join("b.wav"), &w, WavEncoding::Pcm16).unwrap();
        let items = load_wav_dir(dir.path(), 16000).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].category, "audio");
        assert_eq!(items[1].category, "music");
        assert_eq!(items[1].id, "music_a");
        assert!(items.iter().all(|i| i.audio.sample_rate() == 16000 && i.audio.len() == 1600));
        assert!(matches!(load_wav_dir(dir.path().join("music/../music/none"), 16000), Err(Error::Io(_))));
    }
}
