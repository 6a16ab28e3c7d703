//! Two-dimensional conditional mixture used to exercise distillation end
//! to end at toy scale. Latents are `[B, 2, 1, 1]`.

use candle_core::{DType, Device, Module, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::state::{one_step_sample, DistillState};
use super::DistillConfig;
use crate::denoiser::{train_teacher, ConditionalVelocity, LatentPairs, TeacherTrainConfig};
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig, Solver, VelocityModel};
use crate::error::{Error, Result};
use crate::nn::layers::{timestep_embedding, Linear};
use crate::nn::{Init, ParamBuilder, ParamStore};
use crate::rng::SeededRng;

const TIME_DIM: usize = 16;

/// Condition centers; each carries two modes offset by (0, +-1.5).
pub const CENTERS: [(f64, f64); 2] = [(-2.0, 0.0), (2.0, 0.0)];
pub const MODE_OFFSET: f64 = 1.5;
pub const MODE_STD: f64 = 0.3;

pub struct ToyMlp {
    store: ParamStore,
    null_cond: Tensor,
    layers: Vec<Linear>,
}

impl ToyMlp {
    pub fn new(hidden: usize, seed: u64, device: &Device) -> Result<Self> {
        let store = ParamStore::new(DType::F32, device);
        Self::build(ParamBuilder::new(&store, seed), store, hidden)
    }

    fn build(pb: ParamBuilder, store: ParamStore, hidden: usize) -> Result<Self> {
        let null_cond = pb.get("null_cond", &[1, 2], Init::Zeros)?;
        let dims = [4 + TIME_DIM, hidden, hidden, hidden, 2];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&pb.pp(format!("l{i}")), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { store, null_cond, layers })
    }

    fn hidden(&self) -> usize {
        self.layers[0].weight.dims()[0]
    }

    /// Independent trainable copy.
    pub fn deep_copy(&self) -> Result<Self> {
        let store = ParamStore::from_tensors(self.store.snapshot()?, DType::F32, self.store.device())?;
        Self::build(ParamBuilder::new(&store, 0), store, self.hidden())
    }

    /// View sharing this network's weights with gradients cut off.
    pub fn frozen(&self) -> Result<Self> {
        Self::build(ParamBuilder::frozen(&self.store), self.store.clone(), self.hidden())
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn forward(&self, z_t: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        let b = z_t.dims()[0];
        let z = z_t.reshape((b, 2))?;
        let c = cond.reshape((b, 2))?;
        let emb = timestep_embedding(t, TIME_DIM, &z)?;
        let mut h = Tensor::cat(&[&z, &c, &emb], 1)?;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.silu()?;
            }
        }
        Ok(h.reshape((b, 2, 1, 1))?)
    }
}

impl VelocityModel for ToyMlp {
    fn predict_v(&self, z_t: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<Tensor> {
        match cond {
            Some(c) => self.forward(z_t, t, c),
            None => {
                let b = z_t.dims()[0];
                let null = self.null_cond.broadcast_as((b, 2))?.reshape((b, 2, 1, 1))?;
                self.forward(z_t, t, &null)
            }
        }
    }
}

impl ConditionalVelocity for ToyMlp {
    fn predict_v_dropped(&self, z_t: &Tensor, t: &[f64], cond: &Tensor, drop: &[bool]) -> Result<Tensor> {
        let b = z_t.dims()[0];
        let mask: Vec<u8> = drop.iter().map(|&d| d as u8).collect();
        let mask = Tensor::from_vec(mask, (b, 1, 1, 1), z_t.device())?.broadcast_as(cond.dims())?;
        let null = self.null_cond.broadcast_as((b, 2))?.reshape((b, 2, 1, 1))?;
        self.forward(z_t, t, &mask.where_cond(&null, cond)?)
    }

    fn trainable_vars(&self) -> Vec<Var> {
        self.store.vars()
    }
}

/// `n` draws of (x, condition), both `[n, 2, 1, 1]`; conditions alternate
/// between the two centers.
pub fn toy_dataset(n: usize, rng: &mut SeededRng, device: &Device) -> Result<LatentPairs> {
    let mut x = Vec::with_capacity(2 * n);
    let mut c = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (cx, cy) = CENTERS[i % 2];
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let noise = rng.normal_vec(2);
        x.push((cx + MODE_STD * noise[0]) as f32);
        x.push((cy + sign * MODE_OFFSET + MODE_STD * noise[1]) as f32);
        c.push(cx as f32);
        c.push(cy as f32);
    }
    LatentPairs::new(Tensor::from_vec(x, (n, 2, 1, 1), device)?, Tensor::from_vec(c, (n, 2, 1, 1), device)?)
}

/// Squared energy distance (V-statistic) between two point sets `[n, d]`.
pub fn energy_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    fn mean_dist(x: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
        }
        s / (x.len() * y.len()) as f64
    }
    2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
}

pub fn to_points(z: &Tensor) -> Result<Vec<[f64; 2]>> {
    let b = z.dims()[0];
    let v = z.reshape((b, 2))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    Ok(v.into_iter().map(|r| [r[0], r[1]]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub hidden: usize,
    pub dataset_size: usize,
    pub teacher: TeacherTrainConfig,
    pub distill: DistillConfig,
    pub eval_samples: usize,
    pub teacher_sampling_steps: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            dataset_size: 4096,
            teacher: TeacherTrainConfig { steps: 4000, batch_size: 256, lr: 2e-3, cond_dropout: 0.1 },
            distill: DistillConfig {
                omega: 1.0,
                ramp_period: 250,
                ramp_end: 1000,
                lr: 3e-4,
                disc_lr: 3e-4,
                weight_decay: 0.0,
                steps: 3000,
                batch_size: 256,
                ..DistillConfig::paper()
            },
            eval_samples: 1500,
            teacher_sampling_steps: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyOutcome {
    /// Energy distance between two independent teacher sample sets.
    pub baseline: f64,
    /// Ten times the baseline.
    pub threshold: f64,
    pub before: f64,
    pub after: f64,
    pub teacher_final_loss: f64,
    pub distill_steps: usize,
}

fn cond_batch(n: usize, device: &Device) -> Result<Tensor> {
    let c: Vec<f32> = (0..n).flat_map(|i| [CENTERS[i % 2].0 as f32, CENTERS[i % 2].1 as f32]).collect();
    Ok(Tensor::from_vec(c, (n, 2, 1, 1), device)?)
}

fn teacher_samples(teacher: &ToyMlp, cfg: &ToyConfig, rng: &mut SeededRng, device: &Device) -> Result<Vec<[f64; 2]>> {
    let n = cfg.eval_samples;
    let noise = rng.randn((n, 2, 1, 1), DType::F32, device)?;
    let sc = SamplerConfig { steps: cfg.teacher_sampling_steps, omega: cfg.distill.omega, solver: Solver::Ddim };
    to_points(&sample(teacher, &NoiseSchedule::default(), &noise, Some(&cond_batch(n, device)?), &sc)?)
}

fn student_samples<M: VelocityModel>(student: &M, n: usize, rng: &mut SeededRng, device: &Device) -> Result<Vec<[f64; 2]>> {
    let noise = rng.randn((n, 2, 1, 1), DType::F32, device)?;
    to_points(&one_step_sample(student, &NoiseSchedule::default(), &noise, &cond_batch(n, device)?)?)
}

/// Trains a teacher, distills a one-step student from it and compares
/// sample sets by energy distance.
pub fn run_toy_experiment(cfg: &ToyConfig, seed: u64, device: &Device) -> Result<ToyOutcome> {
    let mut rng = SeededRng::new(seed);
    let data = toy_dataset(cfg.dataset_size, &mut rng.fork(10), device)?;
    let teacher = ToyMlp::new(cfg.hidden, seed, device)?;
    let losses = train_teacher(&teacher, &data, &NoiseSchedule::default(), &cfg.teacher, seed ^ 1, |_, _, _| Ok(()))?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let teacher_final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let frozen = teacher.frozen()?;

    let ref_a = teacher_samples(&frozen, cfg, &mut rng.fork(20), device)?;
    let ref_b = teacher_samples(&frozen, cfg, &mut rng.fork(21), device)?;
    let baseline = energy_distance(&ref_a, &ref_b);

    let student = teacher.deep_copy()?;
    let before = energy_distance(&student_samples(&student, cfg.eval_samples, &mut rng.fork(30), device)?, &ref_a);
    let mut state = DistillState::new(student, frozen, 2, cfg.distill.clone(), seed ^ 2)?;
    let reports = state.run(&data, cfg.distill.steps, |_, _| Ok(()))?;
    if reports.is_empty() && cfg.distill.steps > 0 {
        return Err(Error::EmptyDataset);
    }
    let after = energy_distance(&student_samples(&state.student, cfg.eval_samples, &mut rng.fork(31), device)?, &ref_a);
    Ok(ToyOutcome { baseline, threshold: 10.0 * baseline, before, after, teacher_final_loss, distill_steps: state.step })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_distance_properties() {
        let mut rng = SeededRng::new(0);
        let a: Vec<[f64; 2]> = (0..200).map(|_| { let v = rng.normal_vec(2); [v[0], v[1]] }).collect();
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 3.0, p[1]]).collect();
        assert!(energy_distance(&a, &a).abs() < 1e-12);
        let d = energy_distance(&a, &b);
        assert!(d > 1.0);
        assert!((d - energy_distance(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn dataset_layout() {
        let d = toy_dataset(6, &mut SeededRng::new(1), &Device::Cpu).unwrap();
        let c = to_points(&d.z_l).unwrap();
        assert_eq!(c[0], [-2.0, 0.0]);
        assert_eq!(c[1], [2.0, 0.0]);
        let x = to_points(&d.z_h).unwrap();
        assert!(x.iter().zip(&c).all(|(p, q)| (p[0] - q[0]).abs() < 2.0));
    }

    #[test]
    fn zero_weight_steps_record_pure_distillation() {
        let dev = Device::Cpu;
        let data = toy_dataset(64, &mut SeededRng::new(2), &dev).unwrap();
        let teacher = ToyMlp::new(16, 3, &dev).unwrap();
        let before = teacher.store().snapshot().unwrap();
        let cfg = DistillConfig { lambda_adv_final: 0.0, lambda_dmd_final: 0.0, batch_size: 8, ..DistillConfig::desk() };
        let mut state = DistillState::new(teacher.deep_copy().unwrap(), teacher.frozen().unwrap(), 2, cfg, 4).unwrap();
        let student_before = state.student.store().snapshot().unwrap();
        let reports = state.run(&data, 5, |_, _| Ok(())).unwrap();
        for r in &reports {
            assert_eq!(r.total, r.l_distil);
            assert!(r.l_dmd >= 0.0 && r.l_adv >= 0.0 && r.l_disc >= 0.0);
        }
        assert_eq!(state.step, 5);
        let after = teacher.store().snapshot().unwrap();
        for (k, v) in &before {
            let d = (v - &after[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0, "teacher tensor {k} changed");
        }
        let student_after = state.student.store().snapshot().unwrap();
        let moved = student_before.iter().any(|(k, v)| {
            (v - &student_after[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap() > 0.0
        });
        assert!(moved);
    }

    #[test]
    fn both_parameter_sets_move_after_ramp() {
        let dev = Device::Cpu;
        let data = toy_dataset(64, &mut SeededRng::new(5), &dev).unwrap();
        let teacher = ToyMlp::new(16, 6, &dev).unwrap();
        let cfg = DistillConfig { ramp_period: 1, ramp_end: 1, batch_size: 8, ..DistillConfig::desk() };
        let mut state = DistillState::new(teacher.deep_copy().unwrap(), teacher.frozen().unwrap(), 2, cfg, 7).unwrap();
        state.run(&data, 1, |_, _| Ok(())).unwrap();
        let disc_before = state.disc.store().snapshot().unwrap();
        let r = state.run(&data, 1, |_, _| Ok(())).unwrap()[0];
        assert!(r.lambda_adv > 0.0 && r.lambda_dmd > 0.0);
        assert!(r.total > r.l_distil);
        let disc_after = state.disc.store().snapshot().unwrap();
        assert!(disc_before.iter().any(|(k, v)| {
            (v - &disc_after[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap() > 0.0
        }));
    }
}
