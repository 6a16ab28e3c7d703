//! Multi-period and sub-band constant-Q discriminators.

use std::f64::consts::PI;

use candle_core::{DType, Device, Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::stft::hann_window;
use crate::error::{invalid, Result};
use crate::nn::layers::{leaky_relu, Conv1d, Conv2d};
use crate::nn::{ParamBuilder, ParamStore};

const SLOPE: f64 = 0.1;

/// Scores and intermediate features of every sub-discriminator.
#[derive(Debug, Clone, Default)]
pub struct DiscOutput {
    pub scores: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

impl DiscOutput {
    fn push(&mut self, score: Tensor, feats: Vec<Tensor>) {
        self.scores.push(score);
        self.features.push(feats);
    }

    pub fn extend(&mut self, other: DiscOutput) {
        self.scores.extend(other.scores);
        self.features.extend(other.features);
    }
}

/// `[B, 1, L]` to `[B, 1, L'/p, p]` after zero-padding L up to L'.
pub fn fold_by_period(x: &Tensor, period: usize) -> Result<Tensor> {
    let (b, c, l) = x.dims3()?;
    let padded = l.div_ceil(period) * period;
    let x = if padded > l { x.pad_with_zeros(2, 0, padded - l)? } else { x.clone() };
    Ok(x.reshape((b, c, padded / period, period))?)
}

struct PeriodBranch {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodBranch {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let folded = fold_by_period(x, self.period)?;
        let (b, _, n, p) = folded.dims4()?;
        // Each of the p phase columns becomes its own 1-D sequence.
        let mut h = folded.transpose(2, 3)?.contiguous()?.reshape((b * p, 1, n))?;
        let mut feats = Vec::new();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, SLOPE)?;
            feats.push(h.clone());
        }
        let score = self.post.forward(&h)?;
        feats.push(score.clone());
        Ok((score, feats))
    }
}

pub struct MultiPeriodDiscriminator {
    store: ParamStore,
    branches: Vec<PeriodBranch>,
}

impl MultiPeriodDiscriminator {
    pub fn new(periods: &[usize], seed: u64, device: &Device) -> Result<Self> {
        let store = ParamStore::new(DType::F32, device);
        let pb = ParamBuilder::new(&store, seed);
        let widths = [1, 8, 16, 32];
        let mut branches = Vec::new();
        for &p in periods {
            let q = pb.pp(format!("p{p}"));
            let mut convs = Vec::new();
            for (i, w) in widths.windows(2).enumerate() {
                let stride = if i + 2 < widths.len() { 3 } else { 1 };
                convs.push(Conv1d::new(&q.pp(format!("conv{i}")), w[0], w[1], 5, stride, 1)?);
            }
            let post = Conv1d::new(&q.pp("post"), 32, 1, 3, 1, 1)?;
            branches.push(PeriodBranch { period: p, convs, post });
        }
        Ok(Self { store, branches })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut out = DiscOutput::default();
        for b in &self.branches {
            let (s, f) = b.forward(x)?;
            out.push(s, f);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqtConfig {
    pub sample_rate: u32,
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub octaves: usize,
    /// One transform per hop (the multi-scale axis).
    pub hops: Vec<usize>,
    /// Number of contiguous sub-band groups, each with its own network.
    pub groups: usize,
    pub width: usize,
}

impl CqtConfig {
    pub fn desk() -> Self {
        Self { sample_rate: 16000, fmin: 125.0, bins_per_octave: 12, octaves: 6, hops: vec![128], groups: 3, width: 16 }
    }

    pub fn paper() -> Self {
        Self { sample_rate: 48000, fmin: 32.7, bins_per_octave: 24, octaves: 9, hops: vec![256, 512, 1024], groups: 3, width: 32 }
    }

    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.octaves
    }

    pub fn validate(&self) -> Result<()> {
        let top = self.fmin * 2f64.powf((self.n_bins() - 1) as f64 / self.bins_per_octave as f64);
        if top >= self.sample_rate as f64 / 2.0 {
            return invalid(format!("highest constant-Q bin {top:.0} Hz is above Nyquist"));
        }
        if self.groups == 0 || self.n_bins() % self.groups != 0 {
            return invalid("constant-Q bins must split evenly into groups");
        }
        if self.hops.is_empty() || self.hops.contains(&0) {
            return invalid("constant-Q hops must be positive");
        }
        Ok(())
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|k| self.fmin * 2f64.powf(k as f64 / self.bins_per_octave as f64)).collect()
    }
}

/// Fixed complex analysis kernels `[2 * bins, 1, len]` (real parts first).
pub fn cqt_kernels(cfg: &CqtConfig) -> (Vec<f32>, usize) {
    let q = 1.0 / (2f64.powf(1.0 / cfg.bins_per_octave as f64) - 1.0);
    let fs = cfg.sample_rate as f64;
    let freqs = cfg.bin_frequencies();
    let lens: Vec<usize> = freqs.iter().map(|f| ((q * fs / f).ceil() as usize).max(2)).collect();
    let max_len = lens.iter().max().copied().unwrap_or(2) | 1;
    let bins = freqs.len();
    let mut w = vec![0f32; 2 * bins * max_len];
    for (k, (&f, &n)) in freqs.iter().zip(&lens).enumerate() {
        let win = hann_window(n);
        let norm: f64 = win.iter().sum();
        let offset = (max_len - n) / 2;
        for (i, wv) in win.iter().enumerate() {
            let phase = 2.0 * PI * f * (i as f64 - n as f64 / 2.0) / fs;
            w[k * max_len + offset + i] = (wv * phase.cos() / norm) as f32;
            w[(bins + k) * max_len + offset + i] = (-wv * phase.sin() / norm) as f32;
        }
    }
    (w, max_len)
}

struct BandNet {
    convs: Vec<Conv2d>,
    post: Conv2d,
}

pub struct CqtDiscriminator {
    pub config: CqtConfig,
    store: ParamStore,
    kernels: Tensor,
    kernel_len: usize,
    /// One set of band networks per hop.
    nets: Vec<Vec<BandNet>>,
}

impl CqtDiscriminator {
    pub fn new(config: CqtConfig, seed: u64, device: &Device) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(DType::F32, device);
        let pb = ParamBuilder::new(&store, seed);
        let (w, len) = cqt_kernels(&config);
        let kernels = Tensor::from_vec(w, (2 * config.n_bins(), 1, len), device)?;
        let mut nets = Vec::new();
        for (s, _) in config.hops.iter().enumerate() {
            let mut bands = Vec::new();
            for g in 0..config.groups {
                let p = pb.pp(format!("s{s}.band{g}"));
                let w = config.width;
                bands.push(BandNet {
                    convs: vec![Conv2d::new(&p.pp("conv0"), 1, w, 3, 1, 1)?, Conv2d::new(&p.pp("conv1"), w, w, 3, 2, 1)?],
                    post: Conv2d::new(&p.pp("post"), w, 1, 3, 1, 1)?,
                });
            }
            nets.push(bands);
        }
        Ok(Self { config, store, kernels, kernel_len: len, nets })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Constant-Q magnitudes `[B, bins, frames]` with frame k centered on
    /// sample k * hop.
    pub fn cqt_magnitude(&self, x: &Tensor, hop: usize) -> Result<Tensor> {
        let (_, _, l) = x.dims3()?;
        let half = self.kernel_len / 2;
        let padded = x.pad_with_zeros(2, half, half)?;
        let y = padded.conv1d(&self.kernels, 0, hop, 1, 1)?;
        let frames = l / hop;
        let y = y.narrow(2, 0, frames)?;
        let bins = self.config.n_bins();
        let re = y.narrow(1, 0, bins)?;
        let im = y.narrow(1, bins, bins)?;
        Ok((re.sqr()? + im.sqr()?)?.affine(1.0, 1e-8)?.sqrt()?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let mut out = DiscOutput::default();
        let per = self.config.n_bins() / self.config.groups;
        for (hop, bands) in self.config.hops.iter().zip(&self.nets) {
            let logmag = self.cqt_magnitude(x, *hop)?.affine(1.0, 1e-5)?.log()?.unsqueeze(1)?;
            for (g, net) in bands.iter().enumerate() {
                let mut h = logmag.narrow(2, g * per, per)?;
                let mut feats = Vec::new();
                for c in &net.convs {
                    h = leaky_relu(&c.forward(&h)?, SLOPE)?;
                    feats.push(h.clone());
                }
                let score = net.post.forward(&h)?;
                feats.push(score.clone());
                out.push(score, feats);
            }
        }
        Ok(out)
    }
}
