//! One-step student training: distillation against multi-step teacher
//! targets, distribution matching and an adversarial term on teacher
//! outputs.

mod discriminator;
mod losses;
mod state;
pub mod toy;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use losses::{
    adversarial_losses, dmd_gradient, dmd_surrogate, loss_distillation, lsgan_losses, sample_t_double_prime,
    snap_to_grid, teacher_target, AdversarialLosses, DmdNormalization,
};
pub use state::{one_step_sample, DistillLog, DistillState, LossReport};

use serde::{Deserialize, Serialize};

use crate::diffusion::TimestepDistribution;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Fixed guidance scale for every teacher call.
    pub omega: f64,
    pub lambda_adv_final: f64,
    pub lambda_dmd_final: f64,
    /// Steps between weight increments.
    pub ramp_period: usize,
    /// Step at which the finals are reached.
    pub ramp_end: usize,
    pub t_double_prime_set: Vec<f64>,
    /// Number of points on the teacher solver grid t_i = i / K.
    pub grid_points: usize,
    pub timesteps: TimestepDistribution,
    pub dmd_normalization: DmdNormalization,
    pub lr: f64,
    pub disc_lr: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl DistillConfig {
    pub fn paper() -> Self {
        Self {
            omega: 4.0,
            lambda_adv_final: 0.3,
            lambda_dmd_final: 0.7,
            ramp_period: 5000,
            ramp_end: 20000,
            t_double_prime_set: vec![0.01, 0.25, 0.5, 0.75],
            grid_points: 8,
            timesteps: TimestepDistribution::default(),
            dmd_normalization: DmdNormalization::MeanAbs,
            lr: 1e-5,
            disc_lr: 1e-5,
            weight_decay: 1e-2,
            steps: 20000,
            batch_size: 16,
        }
    }

    /// Same algorithm, ramp compressed to a 2K-step budget.
    pub fn desk() -> Self {
        Self { ramp_period: 500, ramp_end: 2000, lr: 1e-4, disc_lr: 1e-4, steps: 2000, batch_size: 4, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_adv_final < 0.0 || self.lambda_dmd_final < 0.0 {
            return invalid("loss weights must be non-negative");
        }
        if self.ramp_period == 0 || self.ramp_end < self.ramp_period || self.ramp_end % self.ramp_period != 0 {
            return invalid("ramp_end must be a positive multiple of ramp_period");
        }
        if self.t_double_prime_set.is_empty() || self.t_double_prime_set.iter().any(|t| !(0.0..1.0).contains(t)) {
            return invalid("t'' atoms must lie in [0, 1)");
        }
        if self.grid_points == 0 || self.batch_size == 0 {
            return invalid("grid_points and batch_size must be positive");
        }
        if !(self.omega.is_finite() && self.lr > 0.0 && self.disc_lr > 0.0) {
            return invalid("omega must be finite and learning rates positive");
        }
        self.timesteps.validate()
    }
}

/// Staircase weights (lambda_adv, lambda_dmd): zero at the start, one
/// equal increment every `ramp_period` steps, finals from `ramp_end` on.
pub fn lambda_schedule(step: usize, cfg: &DistillConfig) -> (f64, f64) {
    let increments = cfg.ramp_end / cfg.ramp_period;
    let k = (step / cfg.ramp_period).min(increments);
    let frac = k as f64 / increments as f64;
    (cfg.lambda_adv_final * frac, cfg.lambda_dmd_final * frac)
}
