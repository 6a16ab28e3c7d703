//! Anti-aliased periodic activation: 2x upsample, low-pass, snake,
//! low-pass, 2x decimate.

use std::f64::consts::PI;

use candle_core::{Module, Tensor};

use super::conv1d_depthwise_fixed;
use crate::dsp::resample::bessel_i0;
use crate::error::Result;
use crate::nn::layers::Conv1d;
use crate::nn::{Init, ParamBuilder};

pub const FIR_TAPS: usize = 12;
const KAISER_BETA: f64 = 5.0;

/// Kaiser-windowed sinc low-pass at a quarter of the sample rate, unit DC
/// gain.
pub fn halfband_taps(taps: usize) -> Vec<f64> {
    let center = (taps as f64 - 1.0) / 2.0;
    let cutoff = 0.25;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let x = i as f64 - center;
            let sinc = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            let r = x / (center + 0.5);
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// x + sin^2(alpha x) / alpha with a learned per-channel alpha.
pub struct Snake {
    alpha: Tensor,
}

impl Snake {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self { alpha: pb.get("alpha", &[1, channels, 1], Init::Ones)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ax = x.broadcast_mul(&self.alpha)?;
        let s = ax.sin()?.sqr()?;
        Ok((x + s.broadcast_div(&(self.alpha.abs()? + 1e-6)?)?)?)
    }
}

pub struct AntiAliasedSnake {
    snake: Snake,
    taps: Tensor,
}

impl AntiAliasedSnake {
    pub fn new(pb: &ParamBuilder, channels: usize) -> Result<Self> {
        let h = halfband_taps(FIR_TAPS);
        let taps = Tensor::from_vec(h, (1, 1, FIR_TAPS), pb.device())?.to_dtype(pb.dtype())?;
        Ok(Self { snake: Snake::new(pb, channels)?, taps })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        // Zero insertion doubles the rate; gain 2 restores the level.
        let up = Tensor::stack(&[&(x * 2.0)?, &x.zeros_like()?], 3)?.reshape((b, c, 2 * l))?;
        let up = conv1d_depthwise_fixed(&up, &self.taps, 1)?;
        let y = self.snake.forward(&up)?;
        conv1d_depthwise_fixed(&y, &self.taps, 2)
    }
}

/// Residual stack of anti-aliased activations and dilated convolutions.
pub struct AmpBlock {
    acts: Vec<AntiAliasedSnake>,
    convs: Vec<Conv1d>,
}

impl AmpBlock {
    pub fn new(pb: &ParamBuilder, channels: usize, kernel: usize, dilations: &[usize]) -> Result<Self> {
        let mut acts = Vec::new();
        let mut convs = Vec::new();
        for (i, &d) in dilations.iter().enumerate() {
            acts.push(AntiAliasedSnake::new(&pb.pp(format!("act{i}")), channels)?);
            convs.push(Conv1d::new(&pb.pp(format!("conv{i}")), channels, channels, kernel, 1, d)?);
        }
        Ok(Self { acts, convs })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (a, c) in self.acts.iter().zip(&self.convs) {
            h = (&h + c.forward(&a.forward(&h)?)?)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn taps_are_symmetric_lowpass() {
        let h = halfband_taps(FIR_TAPS);
        for i in 0..FIR_TAPS {
            assert!((h[i] - h[FIR_TAPS - 1 - i]).abs() < 1e-15);
        }
        let response = |f: f64| {
            let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, v)| {
                (re + v * (2.0 * PI * f * n as f64).cos(), im - v * (2.0 * PI * f * n as f64).sin())
            });
            (re * re + im * im).sqrt()
        };
        assert!((response(0.0) - 1.0).abs() < 1e-12);
        assert!(response(0.45) < 0.1);
    }

    #[test]
    fn activation_preserves_length_and_is_finite() {
        let store = ParamStore::new(DType::F32, &Device::Cpu);
        let act = AntiAliasedSnake::new(&ParamBuilder::new(&store, 0), 3).unwrap();
        let x = crate::rng::SeededRng::new(0).randn((2, 3, 50), DType::F32, &Device::Cpu).unwrap();
        let y = act.forward(&x).unwrap();
        assert_eq!(y.dims(), x.dims());
        assert!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn slow_signal_passes_nearly_unchanged_through_resampling() {
        // With snake near identity for small inputs, a low-frequency sine
        // survives the up/down path.
        let store = ParamStore::new(DType::F64, &Device::Cpu);
        let act = AntiAliasedSnake::new(&ParamBuilder::new(&store, 0), 1).unwrap();
        let n = 256;
        let x: Vec<f64> = (0..n).map(|i| 1e-3 * (2.0 * PI * 0.02 * i as f64).sin()).collect();
        let t = Tensor::from_vec(x.clone(), (1, 1, n), &Device::Cpu).unwrap();
        let y = act.forward(&t).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let err: f64 = (20..n - 20).map(|i| (y[i] - x[i]).abs()).fold(0.0, f64::max);
        assert!(err < 2e-4, "{err}");
    }
}
