//! Conditional v-predicting U-Net shared by teacher and student.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Optimizer;
use serde::{Deserialize, Serialize};

use crate::diffusion::{diffuse_forward, v_target, NoiseSchedule, VelocityModel};
use crate::error::{invalid, Error, Result};
use crate::nn::layers::{group_norm, groups_for, timestep_embedding, upsample_nearest2x, Conv2d, Linear, LoraConfig, SpatialAttention};
use crate::nn::optim::{adamw, finite_scalar, random_batch};
use crate::nn::{Checkpoint, Init, ParamBuilder, ParamStore};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Latent channels C; the network sees 2C input channels.
    pub latent_channels: usize,
    /// Channel width per level, finest first.
    pub widths: Vec<usize>,
    pub time_dim: usize,
    pub attention_heads: usize,
}

impl DenoiserConfig {
    pub fn desk() -> Self {
        Self { latent_channels: 16, widths: vec![32, 64, 128], time_dim: 64, attention_heads: 4 }
    }

    pub fn paper() -> Self {
        Self { latent_channels: 16, widths: vec![128, 256, 512], time_dim: 256, attention_heads: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return invalid("denoiser widths and channels must be positive");
        }
        let deepest = *self.widths.last().unwrap();
        if self.attention_heads == 0 || deepest % self.attention_heads != 0 {
            return invalid(format!("{} heads do not divide width {deepest}", self.attention_heads));
        }
        if self.time_dim < 2 {
            return invalid("time_dim must be at least 2");
        }
        Ok(())
    }
}

struct ResBlock {
    norm1: candle_nn::GroupNorm,
    conv1: Conv2d,
    emb: Linear,
    norm2: candle_nn::GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(pb: &ParamBuilder, c_in: usize, c_out: usize, emb_dim: usize) -> Result<Self> {
        Ok(Self {
            norm1: group_norm(&pb.pp("norm1"), c_in, groups_for(c_in, 8))?,
            conv1: Conv2d::new(&pb.pp("conv1"), c_in, c_out, 3, 1, 1)?,
            emb: Linear::new(&pb.pp("emb"), emb_dim, c_out)?,
            norm2: group_norm(&pb.pp("norm2"), c_out, groups_for(c_out, 8))?,
            conv2: Conv2d::new(&pb.pp("conv2"), c_out, c_out, 3, 1, 1)?,
            skip: if c_in != c_out { Some(Conv2d::new(&pb.pp("skip"), c_in, c_out, 1, 1, 0)?) } else { None },
        })
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let e = self.emb.forward(emb)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&e)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

struct UpLevel {
    conv: Conv2d,
    block: ResBlock,
}

/// Teacher when built without adapters, student when built with them.
pub struct Denoiser {
    pub config: DenoiserConfig,
    base: ParamStore,
    adapters: Option<(ParamStore, LoraConfig)>,
    null_cond: Tensor,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    down_blocks: Vec<ResBlock>,
    downsamplers: Vec<Conv2d>,
    mid1: ResBlock,
    attn: SpatialAttention,
    mid2: ResBlock,
    up: Vec<UpLevel>,
    norm_out: candle_nn::GroupNorm,
    conv_out: Conv2d,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64, device: &Device) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32, device)
    }

    pub fn with_dtype(config: DenoiserConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let base = ParamStore::new(dtype, device);
        Self::build(config, ParamBuilder::new(&base, seed), base, None)
    }

    fn build(
        config: DenoiserConfig,
        pb: ParamBuilder,
        base: ParamStore,
        adapters: Option<(ParamStore, LoraConfig, u64)>,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.latent_channels;
        let w = &config.widths;
        let emb_dim = 4 * config.time_dim;
        let null_cond = pb.get("null_cond", &[1, c, 1, 1], Init::Zeros)?;
        let time1 = Linear::new(&pb.pp("time1"), config.time_dim, emb_dim)?;
        let time2 = Linear::new(&pb.pp("time2"), emb_dim, emb_dim)?;
        let conv_in = Conv2d::new(&pb.pp("conv_in"), 2 * c, w[0], 3, 1, 1)?;
        let mut down_blocks = Vec::new();
        let mut downsamplers = Vec::new();
        for (l, &wl) in w.iter().enumerate().take(w.len() - 1) {
            down_blocks.push(ResBlock::new(&pb.pp(format!("down{l}")), wl, wl, emb_dim)?);
            downsamplers.push(Conv2d::new(&pb.pp(format!("downsample{l}")), wl, w[l + 1], 3, 2, 1)?);
        }
        let deep = *w.last().unwrap();
        let mid1 = ResBlock::new(&pb.pp("mid1"), deep, deep, emb_dim)?;
        let apb = adapters.as_ref().map(|(store, cfg, seed)| (ParamBuilder::new(store, *seed).pp("attn"), cfg));
        let attn = SpatialAttention::new(&pb.pp("attn"), deep, config.attention_heads, apb.as_ref().map(|(p, c)| (p, *c)))?;
        let mid2 = ResBlock::new(&pb.pp("mid2"), deep, deep, emb_dim)?;
        let mut up = Vec::new();
        for l in (0..w.len() - 1).rev() {
            let p = pb.pp(format!("up{l}"));
            up.push(UpLevel {
                conv: Conv2d::new(&p.pp("conv"), w[l + 1], w[l], 3, 1, 1)?,
                block: ResBlock::new(&p.pp("block"), 2 * w[l], w[l], emb_dim)?,
            });
        }
        let norm_out = group_norm(&pb.pp("norm_out"), w[0], groups_for(w[0], 8))?;
        let conv_out = Conv2d::new(&pb.pp("conv_out"), w[0], c, 3, 1, 1)?;
        Ok(Self {
            config,
            base,
            adapters: adapters.map(|(s, c, _)| (s, c)),
            null_cond,
            time1,
            time2,
            conv_in,
            down_blocks,
            downsamplers,
            mid1,
            attn,
            mid2,
            up,
            norm_out,
            conv_out,
        })
    }

    pub fn device(&self) -> &Device {
        self.base.device()
    }

    pub fn dtype(&self) -> DType {
        self.base.dtype()
    }

    pub fn base_store(&self) -> &ParamStore {
        &self.base
    }

    pub fn adapter_store(&self) -> Option<&ParamStore> {
        self.adapters.as_ref().map(|(s, _)| s)
    }

    pub fn lora_config(&self) -> Option<&LoraConfig> {
        self.adapters.as_ref().map(|(_, c)| c)
    }

    /// Parameters an optimizer may update: adapters for a student, every
    /// weight for a plain network.
    pub fn trainable_vars(&self) -> Vec<candle_core::Var> {
        match &self.adapters {
            Some((s, _)) => s.vars(),
            None => self.base.vars(),
        }
    }

    pub fn trainable_fraction(&self) -> f64 {
        let total = self.base.num_params() + self.adapter_store().map_or(0, |s| s.num_params());
        let trainable: usize = self.trainable_vars().iter().map(|v| v.elem_count()).sum();
        trainable as f64 / total as f64
    }

    /// A view sharing this network's weights with gradients cut off.
    pub fn frozen(&self) -> Result<Self> {
        let adapters = match &self.adapters {
            Some(_) => return invalid("freeze a merged student, not one with live adapters"),
            None => None,
        };
        Self::build(self.config.clone(), ParamBuilder::frozen(&self.base), self.base.clone(), adapters)
    }

    fn check_input(&self, z: &Tensor, t: &[f64]) -> Result<()> {
        let d = z.dims();
        if d.len() != 4 || d[1] != self.config.latent_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![d.first().copied().unwrap_or(0), self.config.latent_channels, 0, 0],
                got: d.to_vec(),
            });
        }
        if t.len() != d[0] {
            return invalid(format!("{} timesteps for batch of {}", t.len(), d[0]));
        }
        NoiseSchedule::check_times(t)
    }

    /// Null embedding broadcast to `like`'s shape.
    fn null_like(&self, like: &Tensor) -> Result<Tensor> {
        Ok(self.null_cond.broadcast_as(like.dims())?.to_dtype(like.dtype())?)
    }

    /// Forward pass where sample b uses the null condition if `drop[b]`.
    pub fn predict_v_dropped(&self, z_t: &Tensor, t: &[f64], cond: &Tensor, drop: &[bool]) -> Result<Tensor> {
        self.check_input(z_t, t)?;
        if cond.dims() != z_t.dims() {
            return Err(Error::ShapeMismatch { expected: z_t.dims().to_vec(), got: cond.dims().to_vec() });
        }
        let cond = if drop.iter().any(|&d| d) {
            let mask: Vec<u8> = drop.iter().map(|&d| d as u8).collect();
            let mask = Tensor::from_vec(mask, (drop.len(), 1, 1, 1), z_t.device())?.broadcast_as(z_t.dims())?;
            mask.where_cond(&self.null_like(z_t)?, cond)?
        } else {
            cond.clone()
        };
        self.forward(z_t, t, &cond)
    }

    fn forward(&self, z_t: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = z_t.dims4()?;
        let x = Tensor::cat(&[z_t, cond], 1)?;
        let emb = timestep_embedding(t, self.config.time_dim, z_t)?;
        let emb = self.time2.forward(&self.time1.forward(&emb)?.silu()?)?.silu()?;
        let mut hcur = self.conv_in.forward(&x)?;
        let mut skips = Vec::new();
        for (block, down) in self.down_blocks.iter().zip(&self.downsamplers) {
            hcur = block.forward(&hcur, &emb)?;
            skips.push(hcur.clone());
            hcur = down.forward(&hcur)?;
        }
        hcur = self.mid1.forward(&hcur, &emb)?;
        hcur = self.attn.forward(&hcur)?;
        hcur = self.mid2.forward(&hcur, &emb)?;
        for level in &self.up {
            let skip = skips.pop().unwrap();
            let (_, _, sh, sw) = skip.dims4()?;
            let u = upsample_nearest2x(&hcur)?.narrow(2, 0, sh)?.narrow(3, 0, sw)?;
            let u = level.conv.forward(&u)?;
            hcur = level.block.forward(&Tensor::cat(&[&u, &skip], 1)?, &emb)?;
        }
        let out = self.conv_out.forward(&self.norm_out.forward(&hcur)?.silu()?)?;
        debug_assert_eq!(out.dims()[2..], [h, w]);
        Ok(out)
    }

    /// Folds adapters into a fresh base store; the result is a plain
    /// network with the student's behaviour.
    pub fn merged(&self) -> Result<Self> {
        let Some((_, cfg)) = &self.adapters else {
            return Self::from_tensors(self.config.clone(), self.base.snapshot()?, self.device());
        };
        let mut tensors = self.base.snapshot()?;
        for (name, lin) in ["q", "k", "v", "out"].iter().zip(self.attn.projections()) {
            let a = lin.lora.as_ref().expect("student projections carry adapters");
            let key = format!("attn.{name}.weight");
            let w = (&tensors[&key] + (a.up.matmul(&a.down)? * cfg.scale)?)?;
            tensors.insert(key, w.detach());
        }
        Self::from_tensors(self.config.clone(), tensors, self.device())
    }

    pub fn from_tensors(config: DenoiserConfig, tensors: BTreeMap<String, Tensor>, device: &Device) -> Result<Self> {
        let dtype = tensors.values().next().map_or(DType::F32, |t| t.dtype());
        let base = ParamStore::from_tensors(tensors, dtype, device)?;
        let n = base.names().len();
        let net = Self::build(config, ParamBuilder::new(&base, 0), base.clone(), None)?;
        if base.names().len() != n {
            return Err(Error::Checkpoint("denoiser weights are missing tensors".into()));
        }
        Ok(net)
    }

    pub fn to_checkpoint(&self, kind: &str) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (k, v) in self.base.snapshot()? {
            tensors.insert(format!("base.{k}"), v);
        }
        if let Some((s, _)) = &self.adapters {
            for (k, v) in s.snapshot()? {
                tensors.insert(format!("lora.{k}"), v);
            }
        }
        let config = serde_json::json!({ "denoiser": self.config, "lora": self.lora_config() });
        Ok(Checkpoint::new(kind, config, tensors))
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        let config: DenoiserConfig = serde_json::from_value(ck.config["denoiser"].clone())?;
        let lora: Option<LoraConfig> = serde_json::from_value(ck.config["lora"].clone())?;
        let split = |prefix: &str| -> BTreeMap<String, Tensor> {
            ck.tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect()
        };
        let base = Self::from_tensors(config, split("base."), device)?;
        match lora {
            None => Ok(base),
            Some(cfg) => {
                let student = apply_lora(&base, &cfg, 0)?;
                student.adapter_store().unwrap().load_from(&split("lora."))?;
                Ok(student)
            }
        }
    }
}

/// A velocity network that can be trained with condition dropout.
pub trait ConditionalVelocity: VelocityModel {
    /// Prediction where sample b sees the null condition if `drop[b]`.
    fn predict_v_dropped(&self, z_t: &Tensor, t: &[f64], cond: &Tensor, drop: &[bool]) -> Result<Tensor>;
    fn trainable_vars(&self) -> Vec<candle_core::Var>;
}

impl ConditionalVelocity for Denoiser {
    fn predict_v_dropped(&self, z_t: &Tensor, t: &[f64], cond: &Tensor, drop: &[bool]) -> Result<Tensor> {
        Denoiser::predict_v_dropped(self, z_t, t, cond, drop)
    }

    fn trainable_vars(&self) -> Vec<candle_core::Var> {
        Denoiser::trainable_vars(self)
    }
}

impl VelocityModel for Denoiser {
    fn predict_v(&self, z_t: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<Tensor> {
        self.check_input(z_t, t)?;
        match cond {
            Some(c) => {
                if c.dims() != z_t.dims() {
                    return Err(Error::ShapeMismatch { expected: z_t.dims().to_vec(), got: c.dims().to_vec() });
                }
                self.forward(z_t, t, c)
            }
            None => self.forward(z_t, t, &self.null_like(z_t)?),
        }
    }
}

/// Student sharing the teacher's frozen weights, with zero-initialized
/// adapters on the attention projections as the only trainable tensors.
pub fn apply_lora(teacher: &Denoiser, lora: &LoraConfig, seed: u64) -> Result<Denoiser> {
    if lora.rank == 0 {
        return invalid("LoRA rank must be at least 1");
    }
    if teacher.adapters.is_some() {
        return invalid("network already carries adapters");
    }
    let adapters = ParamStore::new(teacher.dtype(), teacher.device());
    Denoiser::build(
        teacher.config.clone(),
        ParamBuilder::frozen(&teacher.base),
        teacher.base.clone(),
        Some((adapters, *lora, seed)),
    )
}

/// Paired latents `[N, C, H, W]`: targets and their degraded conditions.
#[derive(Debug, Clone)]
pub struct LatentPairs {
    pub z_h: Tensor,
    pub z_l: Tensor,
}

impl LatentPairs {
    pub fn new(z_h: Tensor, z_l: Tensor) -> Result<Self> {
        if z_h.dims() != z_l.dims() || z_h.rank() != 4 {
            return Err(Error::ShapeMismatch { expected: z_h.dims().to_vec(), got: z_l.dims().to_vec() });
        }
        Ok(Self { z_h, z_l })
    }

    pub fn len(&self) -> usize {
        self.z_h.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let ids = Tensor::from_vec(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), idx.len(), self.z_h.device())?;
        Ok((self.z_h.index_select(&ids, 0)?, self.z_l.index_select(&ids, 0)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing the condition with the null embedding.
    pub cond_dropout: f64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 4, lr: 5e-4, cond_dropout: 0.1 }
    }
}

/// Trains a plain network on the v-objective with condition dropout.
/// `on_step` receives (step, loss) after every update.
pub fn train_teacher<N: ConditionalVelocity>(
    net: &N,
    data: &LatentPairs,
    schedule: &NoiseSchedule,
    cfg: &TeacherTrainConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, f64, &N) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return invalid("teacher training needs a non-empty dataset");
    }
    if !(0.0..=1.0).contains(&cfg.cond_dropout) {
        return invalid("cond_dropout must lie in [0, 1]");
    }
    use rand::Rng;
    let mut rng = SeededRng::new(seed).fork(2);
    let mut opt = adamw(net.trainable_vars(), cfg.lr, 0.0)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = random_batch(data.len(), cfg.batch_size, &mut rng);
        let (z_h, z_l) = data.batch(&idx)?;
        let t: Vec<f64> = (0..idx.len()).map(|_| rng.random::<f64>()).collect();
        let drop: Vec<bool> = (0..idx.len()).map(|_| rng.random::<f64>() < cfg.cond_dropout).collect();
        let eps = rng.randn(z_h.dims(), z_h.dtype(), z_h.device())?;
        let z_t = diffuse_forward(schedule, &z_h, &t, &eps)?;
        let target = v_target(schedule, &z_h, &eps, &t)?;
        let v = net.predict_v_dropped(&z_t, &t, &z_l, &drop)?;
        let loss = (v - target)?.sqr()?.mean_all()?;
        let lv = finite_scalar(&loss, step, "teacher loss")?;
        opt.backward_step(&loss)?;
        losses.push(lv);
        on_step(step, lv, net)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{eps_from_v, x0_from_v};

    fn tiny() -> DenoiserConfig {
        DenoiserConfig { latent_channels: 2, widths: vec![4, 8, 8], time_dim: 8, attention_heads: 2 }
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().to_dtype(DType::F64).unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn shape_preserving_for_odd_grids() {
        let net = Denoiser::new(tiny(), 0, &Device::Cpu).unwrap();
        let mut rng = SeededRng::new(1);
        for (h, w) in [(13, 8), (5, 3), (1, 1), (8, 8)] {
            let z = rng.randn((2, 2, h, w), DType::F32, &Device::Cpu).unwrap();
            let v = net.predict_v(&z, &[0.3, 0.9], Some(&z)).unwrap();
            assert_eq!(v.dims(), z.dims());
            assert!(v.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|x| x.is_finite()));
        }
        let z = rng.randn((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(net.predict_v(&z, &[0.5], None).is_err());
    }

    #[test]
    fn fresh_student_matches_teacher() {
        let teacher = Denoiser::new(DenoiserConfig::desk(), 3, &Device::Cpu).unwrap();
        let student = apply_lora(&teacher, &LoraConfig::default(), 4).unwrap();
        let mut rng = SeededRng::new(2);
        let z = rng.randn((2, 16, 13, 8), DType::F32, &Device::Cpu).unwrap();
        let c = rng.randn((2, 16, 13, 8), DType::F32, &Device::Cpu).unwrap();
        let a = teacher.predict_v(&z, &[0.2, 0.7], Some(&c)).unwrap();
        let b = student.predict_v(&z, &[0.2, 0.7], Some(&c)).unwrap();
        assert!(max_abs(&a, &b) <= 1e-6);
        assert!(student.trainable_fraction() < 0.25, "{}", student.trainable_fraction());
    }

    #[test]
    fn merge_then_unmerge_restores_base() {
        let teacher = Denoiser::new(tiny(), 3, &Device::Cpu).unwrap();
        let student = apply_lora(&teacher, &LoraConfig { rank: 2, scale: 1.0 }, 4).unwrap();
        let mut rng = SeededRng::new(9);
        for v in student.adapter_store().unwrap().vars() {
            v.set(&rng.randn(v.dims(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        }
        let z = rng.randn((1, 2, 6, 4), DType::F32, &Device::Cpu).unwrap();
        let merged = student.merged().unwrap();
        let a = student.predict_v(&z, &[0.4], Some(&z)).unwrap();
        assert!(max_abs(&a, &merged.predict_v(&z, &[0.4], Some(&z)).unwrap()) < 1e-4);
        assert!(max_abs(&a, &teacher.predict_v(&z, &[0.4], Some(&z)).unwrap()) > 1e-3);
        for (p, a) in merged.attn.projections().iter().zip(student.attn.projections()) {
            let restored = p.unmerged(a.lora.as_ref().unwrap()).unwrap();
            assert_eq!(restored.weight.dims(), a.weight.dims());
            assert!(max_abs(&restored.weight, &a.weight) < 1e-5);
        }
    }

    #[test]
    fn finite_difference_gradient_matches_autodiff() {
        let net = Denoiser::with_dtype(tiny(), 5, DType::F64, &Device::Cpu).unwrap();
        let mut rng = SeededRng::new(6);
        let z = rng.randn((1, 2, 5, 4), DType::F64, &Device::Cpu).unwrap();
        let c = rng.randn((1, 2, 5, 4), DType::F64, &Device::Cpu).unwrap();
        let target = rng.randn((1, 2, 5, 4), DType::F64, &Device::Cpu).unwrap();
        let loss_of = |net: &Denoiser| -> Tensor {
            (net.predict_v(&z, &[0.37], Some(&c)).unwrap() - &target).unwrap().sqr().unwrap().sum_all().unwrap()
        };
        let loss = loss_of(&net);
        let grads = loss.backward().unwrap();
        for name in ["conv_in.weight", "attn.q.weight", "mid1.emb.weight", "up0.block.conv2.weight"] {
            let var = net.base.get(name).unwrap();
            let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let orig = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let k = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
            let h = 1e-6;
            let bumped = |delta: f64| -> f64 {
                let mut w = orig.clone();
                w[k] += delta;
                var.set(&Tensor::from_vec(w, var.dims(), &Device::Cpu).unwrap()).unwrap();
                loss_of(&net).to_scalar::<f64>().unwrap()
            };
            let fd = (bumped(h) - bumped(-h)) / (2.0 * h);
            var.set(&Tensor::from_vec(orig.clone(), var.dims(), &Device::Cpu).unwrap()).unwrap();
            let rel = (fd - g[k]).abs() / g[k].abs().max(1e-12);
            assert!(rel < 1e-3, "{name}: fd {fd} vs autodiff {}", g[k]);
        }
    }

    #[test]
    fn full_dropout_never_reads_the_condition() {
        let s = NoiseSchedule::default();
        let mut rng = SeededRng::new(7);
        let z_h = rng.randn((3, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let z_l1 = rng.randn((3, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let z_l2 = z_l1.zeros_like().unwrap();
        let cfg = TeacherTrainConfig { steps: 3, batch_size: 2, lr: 1e-3, cond_dropout: 1.0 };
        let run = |z_l: &Tensor| {
            let net = Denoiser::new(tiny(), 1, &Device::Cpu).unwrap();
            let data = LatentPairs::new(z_h.clone(), z_l.clone()).unwrap();
            train_teacher(&net, &data, &s, &cfg, 11, |_, _, _| Ok(())).unwrap();
            net.base.snapshot().unwrap()
        };
        let (a, b) = (run(&z_l1), run(&z_l2));
        for (k, v) in &a {
            assert_eq!(max_abs(v, &b[k]), 0.0, "{k}");
        }
    }

    #[test]
    fn v_loss_is_reweighted_eps_loss() {
        // ||v_hat - v||^2 = ||eps_hat - eps||^2 / alpha^2 for the VP identities.
        let s = NoiseSchedule::default();
        let mut rng = SeededRng::new(8);
        let z0 = rng.randn((4, 1, 3, 3), DType::F64, &Device::Cpu).unwrap();
        let eps = rng.randn((4, 1, 3, 3), DType::F64, &Device::Cpu).unwrap();
        let t = [0.1, 0.4, 0.6, 0.8];
        let z_t = diffuse_forward(&s, &z0, &t, &eps).unwrap();
        let v = v_target(&s, &z0, &eps, &t).unwrap();
        let v_hat = (&v + rng.randn((4, 1, 3, 3), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let eps_hat = eps_from_v(&s, &z_t, &v_hat, &t).unwrap();
        let _ = x0_from_v(&s, &z_t, &v_hat, &t).unwrap();
        for (b, &tb) in t.iter().enumerate() {
            let dv = (v_hat.get(b).unwrap() - v.get(b).unwrap()).unwrap().sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            let de = (eps_hat.get(b).unwrap() - eps.get(b).unwrap()).unwrap().sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            assert!((dv - de / s.alpha(tb).powi(2)).abs() < 1e-9 * dv.max(1.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_keeps_adapters() {
        let teacher = Denoiser::new(tiny(), 3, &Device::Cpu).unwrap();
        let student = apply_lora(&teacher, &LoraConfig { rank: 2, scale: 1.0 }, 4).unwrap();
        let mut rng = SeededRng::new(10);
        for v in student.adapter_store().unwrap().vars() {
            v.set(&rng.randn(v.dims(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        }
        let bytes = student.to_checkpoint("student").unwrap().to_bytes().unwrap();
        let back = Denoiser::from_checkpoint(&Checkpoint::from_bytes(&bytes, &Device::Cpu).unwrap(), &Device::Cpu).unwrap();
        let z = rng.randn((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let a = student.predict_v(&z, &[0.5], None).unwrap();
        assert_eq!(max_abs(&a, &back.predict_v(&z, &[0.5], None).unwrap()), 0.0);
    }
}
