//! Deterministic ODE samplers over the probability-flow ODE in
//! v-parameterization.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::guidance::cfg_combine;
use super::schedule::{per_sample, NoiseSchedule};
use super::vparam::{eps_from_v, x0_from_v};
use crate::error::{invalid, Result};

/// A network (or closed form) predicting v from a noisy latent. `t` holds
/// one timestep per batch element; `cond = None` selects the unconditional
/// pathway.
pub trait VelocityModel {
    fn predict_v(&self, z_t: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<Tensor>;
}

impl<M: VelocityModel + ?Sized> VelocityModel for &M {
    fn predict_v(&self, z_t: &Tensor, t: &[f64], cond: Option<&Tensor>) -> Result<Tensor> {
        (**self).predict_v(z_t, t, cond)
    }
}

/// Classifier-free guided prediction. Scale 1 (or no condition) costs one
/// evaluation, anything else two.
pub fn guided_v<M: VelocityModel + ?Sized>(
    model: &M,
    z_t: &Tensor,
    t: &[f64],
    cond: Option<&Tensor>,
    omega: f64,
) -> Result<Tensor> {
    let v_cond = model.predict_v(z_t, t, cond)?;
    if cond.is_none() || omega == 1.0 {
        return Ok(v_cond);
    }
    let v_uncond = model.predict_v(z_t, t, None)?;
    cfg_combine(&v_cond, &v_uncond, omega)
}

/// One DDIM step from `t_from` to `t_to`:
/// alpha(t_to) z0_hat + sigma(t_to) eps_hat.
pub fn ode_step(s: &NoiseSchedule, z_t: &Tensor, v_hat: &Tensor, t_from: &[f64], t_to: &[f64]) -> Result<Tensor> {
    if t_from.len() != t_to.len() {
        return invalid("t_from and t_to must have one entry per sample");
    }
    if let Some((a, b)) = t_from.iter().zip(t_to).find(|(a, b)| b >= a) {
        return invalid(format!("ode_step needs t_to < t_from, got {b} >= {a}"));
    }
    let z0 = x0_from_v(s, z_t, v_hat, t_from)?;
    let eps = eps_from_v(s, z_t, v_hat, t_from)?;
    let a: Vec<f64> = t_to.iter().map(|&t| s.alpha(t)).collect();
    let b: Vec<f64> = t_to.iter().map(|&t| s.sigma(t)).collect();
    Ok((z0.broadcast_mul(&per_sample(&a, z_t)?)? + eps.broadcast_mul(&per_sample(&b, z_t)?)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Ddim,
    /// Second-order multistep DPM-Solver++ in data prediction.
    DpmSolverPp2m,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub omega: f64,
    pub solver: Solver,
}

impl SamplerConfig {
    /// Network evaluations consumed by one sampling run.
    pub fn nfe(&self, conditional: bool) -> usize {
        let per_step = if conditional && self.omega != 1.0 { 2 } else { 1 };
        self.steps * per_step
    }
}

/// Integrates from `t_start` down to 0 on a uniform grid of `cfg.steps`
/// intervals.
pub fn sample_from<M: VelocityModel + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    z_start: &Tensor,
    t_start: f64,
    cond: Option<&Tensor>,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    if cfg.steps == 0 {
        return invalid("sampler needs at least one step");
    }
    let b = z_start.dims()[0];
    let grid: Vec<f64> = (0..=cfg.steps).rev().map(|k| t_start * k as f64 / cfg.steps as f64).collect();
    let mut z = z_start.clone();
    let mut prev_x0: Option<Tensor> = None;
    for (k, pair) in grid.windows(2).enumerate() {
        let (t_from, t_to) = (pair[0], pair[1]);
        let v = guided_v(model, &z, &vec![t_from; b], cond, cfg.omega)?;
        let x0 = x0_from_v(s, &z, &v, &vec![t_from; b])?;
        let last = k + 1 == cfg.steps;
        z = match (cfg.solver, &prev_x0) {
            (Solver::DpmSolverPp2m, Some(x0_prev)) if !last => {
                let t_prev = grid[k - 1];
                let (l_prev, l_from, l_to) = (s.lambda(t_prev), s.lambda(t_from), s.lambda(t_to));
                let h = l_to - l_from;
                let r = (l_from - l_prev) / h;
                let d = ((&x0 * (1.0 + 0.5 / r))? - (x0_prev * (0.5 / r))?)?;
                let ratio = s.sigma(t_to) / s.sigma(t_from);
                let coef = -s.alpha(t_to) * ((-h).exp() - 1.0);
                ((&z * ratio)? + (d * coef)?)?
            }
            _ => ode_step(s, &z, &v, &vec![t_from; b], &vec![t_to; b])?,
        };
        prev_x0 = Some(x0);
    }
    Ok(z)
}

/// Full reverse trajectory from pure noise at t = 1.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    noise: &Tensor,
    cond: Option<&Tensor>,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    sample_from(model, s, noise, 1.0, cond, cfg)
}
