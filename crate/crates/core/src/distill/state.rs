use std::fs::File;
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer};
use serde::Serialize;

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::losses::{adversarial_losses, dmd_gradient, dmd_surrogate, loss_distillation, scalar, snap_to_grid, teacher_target};
use super::{lambda_schedule, DistillConfig};
use crate::denoiser::{ConditionalVelocity, LatentPairs};
use crate::diffusion::{diffuse_forward, x0_from_v, NoiseSchedule, VelocityModel};
use crate::error::{Error, Result};
use crate::nn::optim::{adamw, random_batch};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub l_distil: f64,
    pub l_dmd: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub lambda_adv: f64,
    pub lambda_dmd: f64,
    /// Weighted student objective actually back-propagated.
    pub total: f64,
    pub wall_clock: f64,
}

impl LossReport {
    fn check(&self) -> Result<()> {
        let parts = [self.l_distil, self.l_dmd, self.l_adv, self.l_disc, self.total];
        if parts.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        Err(Error::NonFiniteLoss {
            step: self.step as u64,
            snapshot: format!(
                "L_distil={} L_dmd={} L_adv={} L_disc={} lambda_adv={} lambda_dmd={}",
                self.l_distil, self.l_dmd, self.l_adv, self.l_disc, self.lambda_adv, self.lambda_dmd
            ),
        })
    }
}

/// Student, frozen teacher, discriminator and both optimizers.
pub struct DistillState<S, T> {
    pub student: S,
    pub teacher: T,
    pub disc: Discriminator,
    pub config: DistillConfig,
    pub schedule: NoiseSchedule,
    pub step: usize,
    opt_student: AdamW,
    opt_disc: AdamW,
    rng: SeededRng,
    started: Instant,
}

impl<S: ConditionalVelocity, T: VelocityModel> DistillState<S, T> {
    pub fn new(student: S, teacher: T, latent_channels: usize, config: DistillConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vars = student.trainable_vars();
        let (dtype, device) = match vars.first() {
            Some(v) => (v.dtype(), v.device().clone()),
            None => return Err(Error::InvalidArgument("student has no trainable parameters".into())),
        };
        let disc = Discriminator::new(DiscriminatorConfig::desk(latent_channels), seed ^ 0xd15c, dtype, &device)?;
        let opt_student = adamw(vars, config.lr, config.weight_decay)?;
        let opt_disc = adamw(disc.store().vars(), config.disc_lr, config.weight_decay)?;
        Ok(Self {
            student,
            teacher,
            disc,
            schedule: NoiseSchedule::default(),
            step: 0,
            opt_student,
            opt_disc,
            rng: SeededRng::new(seed).fork(3),
            started: Instant::now(),
            config,
        })
    }

    /// One iteration of the student training loop on a batch.
    pub fn distill_step(&mut self, z_h: &Tensor, z_l: &Tensor) -> Result<LossReport> {
        let cfg = &self.config;
        let s = self.schedule;
        let b = z_h.dims()[0];
        let (lambda_adv, lambda_dmd) = lambda_schedule(self.step, cfg);

        let idx: Vec<usize> =
            (0..b).map(|_| snap_to_grid(cfg.timesteps.sample(&mut self.rng), cfg.grid_points)).collect();
        let t_i: Vec<f64> = idx.iter().map(|&i| i as f64 / cfg.grid_points as f64).collect();
        let eps = self.rng.randn(z_h.dims(), z_h.dtype(), z_h.device())?;
        let z_ti = diffuse_forward(&s, z_h, &t_i, &eps)?;
        let v = self.student.predict_v(&z_ti, &t_i, Some(z_l))?;
        let z_hat = x0_from_v(&s, &z_ti, &v, &t_i)?;
        let (z_t0, _) = teacher_target(&self.teacher, &s, &z_ti, &idx, Some(z_l), cfg.omega, cfg.grid_points)?;

        let l_distil = loss_distillation(&z_hat, &z_t0)?;
        let g = dmd_gradient(
            &self.teacher,
            &self.student,
            &s,
            &z_hat,
            Some(z_l),
            cfg.omega,
            cfg.dmd_normalization,
            &mut self.rng,
        )?;
        let l_dmd = dmd_surrogate(&z_hat, &g)?;
        let adv =
            adversarial_losses(&self.disc, &self.teacher, &s, z_h, &z_hat, Some(z_l), &cfg.t_double_prime_set, &mut self.rng)?;

        let total = ((&l_distil + (&l_dmd * lambda_dmd)?)? + (&adv.l_adv * lambda_adv)?)?;
        let report = LossReport {
            step: self.step,
            l_distil: scalar(&l_distil)?,
            l_dmd: scalar(&l_dmd)?,
            l_adv: scalar(&adv.l_adv)?,
            l_disc: scalar(&adv.l_disc)?,
            lambda_adv,
            lambda_dmd,
            total: scalar(&total)?,
            wall_clock: self.started.elapsed().as_secs_f64(),
        };
        report.check()?;
        self.opt_student.backward_step(&total)?;
        self.opt_disc.backward_step(&adv.l_disc)?;
        self.step += 1;
        Ok(report)
    }

    /// Runs `steps` iterations on random minibatches from `data`.
    pub fn run(
        &mut self,
        data: &LatentPairs,
        steps: usize,
        mut on_step: impl FnMut(&LossReport, &Self) -> Result<()>,
    ) -> Result<Vec<LossReport>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let ids = random_batch(data.len(), self.config.batch_size, &mut self.rng);
            let (z_h, z_l) = data.batch(&ids)?;
            let r = self.distill_step(&z_h, &z_l)?;
            on_step(&r, self)?;
            out.push(r);
        }
        Ok(out)
    }

    /// One-step student sample from pure noise.
    pub fn student_sample(&self, noise: &Tensor, z_l: &Tensor) -> Result<Tensor> {
        one_step_sample(&self.student, &self.schedule, noise, z_l)
    }
}

/// x0 prediction at t = 1 from noise: a single network evaluation.
pub fn one_step_sample<M: VelocityModel + ?Sized>(model: &M, s: &NoiseSchedule, noise: &Tensor, z_l: &Tensor) -> Result<Tensor> {
    let b = noise.dims()[0];
    let t = vec![1.0; b];
    let v = model.predict_v(noise, &t, Some(z_l))?;
    Ok(x0_from_v(s, noise, &v, &t)?.to_dtype(DType::F32)?)
}

/// Append-only CSV log of loss reports.
pub struct DistillLog {
    writer: csv::Writer<File>,
}

impl DistillLog {
    pub const HEADER: [&'static str; 8] =
        ["step", "L_distil", "L_dmd", "L_adv", "L_disc", "lambda_adv", "lambda_dmd", "wall_clock"];

    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(Self::HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, r: &LossReport) -> Result<()> {
        self.writer.write_record([
            r.step.to_string(),
            r.l_distil.to_string(),
            r.l_dmd.to_string(),
            r.l_adv.to_string(),
            r.l_disc.to_string(),
            r.lambda_adv.to_string(),
            r.lambda_dmd.to_string(),
            format!("{:.3}", r.wall_clock),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}
