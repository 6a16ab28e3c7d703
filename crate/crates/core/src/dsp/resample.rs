//! Band-limited resampling by windowed-sinc interpolation.

use std::f64::consts::PI;

use super::Waveform;
use crate::error::{invalid, Result};

/// Zero crossings of the sinc kernel kept on each side, measured at the
/// lower of the two rates.
const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;
/// Fraction of the lower Nyquist frequency kept as passband.
const ROLLOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resamples `w` to `target_rate`. Output length is
/// `round(n * target_rate / sample_rate)`.
pub fn resample_sinc(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return invalid("target sample rate must be positive");
    }
    let src_rate = w.sample_rate();
    if src_rate == target_rate {
        return Ok(w.clone());
    }
    let input = w.samples();
    let n = input.len();
    let ratio = target_rate as f64 / src_rate as f64;
    let out_len = ((n as f64 * ratio).round() as usize).max(1);

    // Cutoff in cycles per input sample, relative to the input Nyquist.
    let cutoff = ROLLOFF * ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);

    let mut out = Vec::with_capacity(out_len);
    for k in 0..out_len {
        let center = k as f64 / ratio;
        let lo = ((center - half_width).ceil().max(0.0)) as usize;
        let hi = ((center + half_width).floor() as isize).min(n as isize - 1);
        let mut acc = 0.0f64;
        if hi >= lo as isize {
            for (j, &x) in input.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = j as f64 - center;
                let r = d / half_width;
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                acc += x as f64 * cutoff * sinc(cutoff * d) * win;
            }
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    fn peak_bin(x: &[f32]) -> usize {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        (1..buf.len() / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn length_arithmetic() {
        let w = Waveform::silence(4000, 4000).unwrap();
        let up = resample_sinc(&w, 48000).unwrap();
        assert_eq!(up.len(), 48000);
        assert_eq!(up.sample_rate(), 48000);
        let w = Waveform::silence(1001, 16000).unwrap();
        assert_eq!(resample_sinc(&w, 44100).unwrap().len(), 2759);
    }

    #[test]
    fn identity_rate_is_exact() {
        let w = tone(1000.0, 48000, 0.1);
        let out = resample_sinc(&w, 48000).unwrap();
        let max = w
            .samples()
            .iter()
            .zip(out.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max < 1e-6);
    }

    #[test]
    fn zero_rate_rejected() {
        let w = tone(100.0, 8000, 0.01);
        assert!(resample_sinc(&w, 0).is_err());
    }

    #[test]
    fn upsampled_tone_keeps_its_peak() {
        let w = tone(440.0, 8000, 1.0);
        let up = resample_sinc(&w, 48000).unwrap();
        // 1 s at 48 kHz gives 1 Hz bins.
        let bin = peak_bin(up.samples());
        assert!((bin as i64 - 440).abs() <= 1, "peak at bin {bin}");
    }

    #[test]
    fn round_trip_preserves_passband_energy() {
        for &(f, r1, r2) in &[(300.0, 16000u32, 4000u32), (1500.0, 16000, 6000), (5000.0, 48000, 16000)] {
            let w = tone(f, r1, 0.5);
            let back = resample_sinc(&resample_sinc(&w, r2).unwrap(), r1).unwrap();
            assert_eq!(back.len(), w.len());
            // Ignore the kernel's edge transient.
            let edge = r1 as usize / 50;
            let e_in: f64 = w.samples()[edge..w.len() - edge].iter().map(|&s| (s as f64).powi(2)).sum();
            let e_out: f64 = back.samples()[edge..w.len() - edge].iter().map(|&s| (s as f64).powi(2)).sum();
            assert!((e_out / e_in - 1.0).abs() < 0.01, "f={f} ratio {}", e_out / e_in);
        }
    }

    #[test]
    fn downsampling_removes_content_above_new_nyquist() {
        let w = tone(6000.0, 16000, 0.5);
        let down = resample_sinc(&w, 8000).unwrap();
        let edge = 200;
        let e: f64 = down.samples()[edge..down.len() - edge].iter().map(|&s| (s as f64).powi(2)).sum();
        let e_in: f64 = w.samples().iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / 2.0;
        assert!(e / e_in < 1e-4);
    }
}
