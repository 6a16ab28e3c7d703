//! Short-time Fourier magnitude with centered, zero-padded framing.
//!
//! Frame `k` is centered on sample `k * hop`, and a signal of `n` samples
//! yields `floor(n / hop)` frames.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect()
}

pub fn frame_count(n_samples: usize, hop: usize) -> usize {
    n_samples / hop
}

/// Magnitude STFT, `[window / 2 + 1, frames]`, computed in f64.
pub fn stft_magnitude(samples: &[f32], window_size: usize, hop: usize) -> Array2<f64> {
    let frames = frame_count(samples.len(), hop);
    let bins = window_size / 2 + 1;
    let window = hann_window(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let half = (window_size / 2) as isize;
    let mut out = Array2::<f64>::zeros((bins, frames));
    let mut buf = vec![Complex::new(0.0, 0.0); window_size];
    for k in 0..frames {
        let start = (k * hop) as isize - half;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] as f64 } else { 0.0 };
            *slot = Complex::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out[[b, k]] = buf[b].norm();
        }
    }
    out
}
