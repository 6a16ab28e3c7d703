//! Differentiable building blocks shared by the codec, denoiser,
//! discriminators and vocoder.

use candle_core::{Module, Tensor, D};
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamBuilder};
use crate::error::Result;

/// Low-rank adapter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LoraAdapter {
    /// `[rank, in]`
    pub down: Tensor,
    /// `[out, rank]`, zero-initialized so the adapter starts as a no-op.
    pub up: Tensor,
    pub scale: f64,
}

/// Dense layer over the last axis, optionally with a low-rank adapter.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub lora: Option<LoraAdapter>,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = pb.get("weight", &[out_dim, in_dim], Init::Uniform { fan_in: in_dim, gain: 1.0 })?;
        let bias = pb.get("bias", &[out_dim], Init::Zeros)?;
        Ok(Self { weight, bias, lora: None })
    }

    /// Attaches an adapter whose parameters come from `adapter_pb`.
    pub fn with_lora(mut self, adapter_pb: &ParamBuilder, cfg: &LoraConfig) -> Result<Self> {
        let (out_dim, in_dim) = self.weight.dims2()?;
        let down = adapter_pb.get("lora_down", &[cfg.rank, in_dim], Init::Uniform { fan_in: in_dim, gain: 1.0 })?;
        let up = adapter_pb.get("lora_up", &[out_dim, cfg.rank], Init::Zeros)?;
        self.lora = Some(LoraAdapter { down, up, scale: cfg.scale });
        Ok(self)
    }

    /// Folds the adapter into the base weight.
    pub fn merged(&self) -> Result<Self> {
        match &self.lora {
            None => Ok(self.clone()),
            Some(a) => Ok(Self {
                weight: (&self.weight + (a.up.matmul(&a.down)? * a.scale)?)?,
                bias: self.bias.clone(),
                lora: None,
            }),
        }
    }

    /// Removes a previously merged adapter's contribution from the weight.
    pub fn unmerged(&self, adapter: &LoraAdapter) -> Result<Self> {
        Ok(Self {
            weight: (&self.weight - (adapter.up.matmul(&adapter.down)? * adapter.scale)?)?,
            bias: self.bias.clone(),
            lora: None,
        })
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        match &self.lora {
            None => Ok(y),
            Some(a) => {
                let delta = x.broadcast_matmul(&a.down.t()?)?.broadcast_matmul(&a.up.t()?)?;
                y + (delta * a.scale)?
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let weight = pb.get("weight", &[c_out, c_in, kernel, kernel], Init::Uniform { fan_in, gain: 1.0 })?;
        let bias = pb.get("bias", &[c_out], Init::Zeros)?;
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn zero_init(pb: &ParamBuilder, c_in: usize, c_out: usize, kernel: usize, padding: usize) -> Result<Self> {
        let weight = pb.get("weight", &[c_out, c_in, kernel, kernel], Init::Zeros)?;
        let bias = pb.get("bias", &[c_out], Init::Zeros)?;
        Ok(Self { weight, bias, stride: 1, padding })
    }
}

/// Zero-pads `axis` by `pad` on the left and trims the right so a strided
/// window of extent `k` tiles it exactly. Convolutions then run with zero
/// implicit padding, which keeps candle's transposed-conv backward in range
/// for short and odd-length inputs.
pub(crate) fn pad_for_conv(x: &Tensor, axis: usize, pad: usize, k: usize, stride: usize) -> candle_core::Result<Tensor> {
    let n = x.dim(axis)?;
    let rem = (n + 2 * pad).saturating_sub(k) % stride;
    let right = pad as isize - rem as isize;
    let x = x.pad_with_zeros(axis, pad, right.max(0) as usize)?;
    if right < 0 {
        let len = x.dim(axis)? - (-right) as usize;
        return x.narrow(axis, 0, len);
    }
    Ok(x)
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let k = self.weight.dim(2)?;
        let x = pad_for_conv(x, 2, self.padding, k, self.stride)?;
        let x = pad_for_conv(&x, 3, self.padding, k, self.stride)?;
        let y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        pb: &ParamBuilder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let weight = pb.get("weight", &[c_out, c_in, kernel], Init::Uniform { fan_in: c_in * kernel, gain: 1.0 })?;
        let bias = pb.get("bias", &[c_out], Init::Zeros)?;
        let padding = dilation * (kernel - 1) / 2;
        Ok(Self { weight, bias, stride, padding, dilation })
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }
}

impl Module for Conv1d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let extent = self.dilation * (self.weight.dim(2)? - 1) + 1;
        let x = pad_for_conv(x, 2, self.padding, extent, self.stride)?;
        let y = x.conv1d(&self.weight, 0, self.stride, self.dilation, 1)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1))?)
    }
}

pub fn group_norm(pb: &ParamBuilder, channels: usize, groups: usize) -> Result<candle_nn::GroupNorm> {
    let weight = pb.get("weight", &[channels], Init::Ones)?;
    let bias = pb.get("bias", &[channels], Init::Zeros)?;
    Ok(candle_nn::GroupNorm::new(weight, bias, channels, groups.min(channels), 1e-5)?)
}

/// Largest group count not above `preferred` that divides `channels`.
pub fn groups_for(channels: usize, preferred: usize) -> usize {
    (1..=preferred.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Nearest-neighbour upsampling along the last axis of `[B, C, L]`.
/// Built from broadcast and reshape so gradients accumulate correctly.
pub fn upsample_nearest1d(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, l) = x.dims3()?;
    Ok(x.unsqueeze(3)?.broadcast_as((b, c, l, factor))?.reshape((b, c, l * factor))?)
}

/// Nearest-neighbour ×2 upsampling of `[B, C, H, W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .unsqueeze(3)?
        .unsqueeze(5)?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

/// Sinusoidal embedding of `t * 1000` with `dim` channels, `[B, dim]`.
pub fn timestep_embedding(t: &[f64], dim: usize, like: &Tensor) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &t in t {
        let x = t * 1000.0;
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push((x * freq).cos());
        }
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push((x * freq).sin());
        }
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), like.device())?.to_dtype(like.dtype())?)
}

/// Multi-head self-attention over the spatial positions of `[B, C, H, W]`
/// with adapter-capable projections.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    norm: candle_nn::GroupNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    heads: usize,
}

impl SpatialAttention {
    pub fn new(pb: &ParamBuilder, channels: usize, heads: usize, lora: Option<(&ParamBuilder, &LoraConfig)>) -> Result<Self> {
        let proj = |name: &str| -> Result<Linear> {
            let l = Linear::new(&pb.pp(name), channels, channels)?;
            match lora {
                Some((apb, cfg)) => l.with_lora(&apb.pp(name), cfg),
                None => Ok(l),
            }
        };
        let q = proj("q")?;
        let k = proj("k")?;
        let v = proj("v")?;
        let out = proj("out")?;
        Ok(Self { norm: group_norm(&pb.pp("norm"), channels, groups_for(channels, 8))?, q, k, v, out, heads })
    }

    pub fn projections(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.out]
    }

    pub fn projections_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.out]
    }
}

impl Module for SpatialAttention {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let n = h * w;
        let hd = c / self.heads;
        let tokens = self.norm.forward(x)?.reshape((b, c, n))?.transpose(1, 2)?;
        let split = |t: Tensor| -> candle_core::Result<Tensor> {
            t.reshape((b, n, self.heads, hd))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q.forward(&tokens)?)?;
        let k = split(self.k.forward(&tokens)?)?;
        let v = split(self.v.forward(&tokens)?)?;
        let att = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, n, c))?;
        let y = self.out.forward(&y)?;
        x + y.transpose(1, 2)?.reshape((b, c, h, w))?
    }
}
