use candle_core::{DType, Tensor, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::Discriminator;
use crate::diffusion::schedule::per_sample;
use crate::diffusion::{diffuse_forward, eps_from_v, guided_v, ode_step, score_from_eps, NoiseSchedule, VelocityModel};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

/// Index i in 1..=K of the grid point nearest to t.
pub fn snap_to_grid(t: f64, grid_points: usize) -> usize {
    ((t * grid_points as f64).round() as usize).clamp(1, grid_points)
}

/// Teacher target z_{t_0}: starting from `z_ti` (sample b at grid index
/// `idx[b]`), take guided solver steps through t_j = j / K down to 0.
/// Returns the target (detached) and the number of network evaluations.
pub fn teacher_target<M: VelocityModel + ?Sized>(
    teacher: &M,
    s: &NoiseSchedule,
    z_ti: &Tensor,
    idx: &[usize],
    z_l: Option<&Tensor>,
    omega: f64,
    grid_points: usize,
) -> Result<(Tensor, usize)> {
    let b = z_ti.dims()[0];
    if idx.len() != b {
        return invalid(format!("{} grid indices for a batch of {b}", idx.len()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i == 0 || i > grid_points) {
        return invalid(format!("grid index {bad} outside 1..={grid_points}"));
    }
    let per_eval = if z_l.is_some() && omega != 1.0 { 2 } else { 1 };
    let k = grid_points as f64;
    let top = *idx.iter().max().unwrap();
    let mut z = z_ti.detach();
    let mut nfe = 0;
    for j in (0..top).rev() {
        let active: Vec<bool> = idx.iter().map(|&i| i > j).collect();
        let t_from: Vec<f64> = vec![(j + 1) as f64 / k; b];
        let t_to: Vec<f64> = vec![j as f64 / k; b];
        let v = guided_v(teacher, &z, &t_from, z_l, omega)?.detach();
        nfe += per_eval;
        let stepped = ode_step(s, &z, &v, &t_from, &t_to)?;
        z = if active.iter().all(|&a| a) {
            stepped
        } else {
            let mask: Vec<u8> = active.iter().map(|&a| a as u8).collect();
            let mut shape = vec![1usize; z.rank()];
            shape[0] = b;
            let mask = Tensor::from_vec(mask, shape.as_slice(), z.device())?.broadcast_as(z.dims())?;
            mask.where_cond(&stepped, &z)?
        };
    }
    Ok((z.detach(), nfe))
}

/// Mean squared error.
pub fn loss_distillation(z_hat: &Tensor, z_target: &Tensor) -> Result<Tensor> {
    if z_hat.dims() != z_target.dims() {
        return Err(Error::ShapeMismatch { expected: z_hat.dims().to_vec(), got: z_target.dims().to_vec() });
    }
    Ok((z_hat - z_target)?.sqr()?.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DmdNormalization {
    None,
    /// Divide by the per-sample mean |s_teacher - s_student| + 1e-8.
    MeanAbs,
}

/// Gradient to inject on the one-step output `z_hat`: re-noise at
/// t' ~ U(0, 1), score both models, and return
/// alpha(t') (s_student - s_teacher), normalized per sample.
/// No graph is kept through either network.
#[allow(clippy::too_many_arguments)]
pub fn dmd_gradient<T: VelocityModel + ?Sized, S: VelocityModel + ?Sized>(
    teacher: &T,
    student: &S,
    s: &NoiseSchedule,
    z_hat: &Tensor,
    z_l: Option<&Tensor>,
    omega: f64,
    norm: DmdNormalization,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let z_hat = z_hat.detach();
    let b = z_hat.dims()[0];
    let t: Vec<f64> = (0..b)
        .map(|_| loop {
            let t = rng.random::<f64>();
            if s.sigma(t) > 0.0 {
                break t;
            }
        })
        .collect();
    let eps = rng.randn(z_hat.dims(), z_hat.dtype(), z_hat.device())?;
    let z_t = diffuse_forward(s, &z_hat, &t, &eps)?;
    let v_teacher = guided_v(teacher, &z_t, &t, z_l, omega)?.detach();
    let v_student = student.predict_v(&z_t, &t, z_l)?.detach();
    let s_teacher = score_from_eps(s, &eps_from_v(s, &z_t, &v_teacher, &t)?, &t)?;
    let s_student = score_from_eps(s, &eps_from_v(s, &z_t, &v_student, &t)?, &t)?;
    let diff = (s_student - s_teacher)?;
    let alpha: Vec<f64> = t.iter().map(|&t| s.alpha(t)).collect();
    let g = diff.broadcast_mul(&per_sample(&alpha, &diff)?)?;
    let g = match norm {
        DmdNormalization::None => g,
        DmdNormalization::MeanAbs => {
            let scale = (diff.abs()?.flatten_from(1)?.mean(D::Minus1)? + 1e-8)?;
            let mut shape = vec![1usize; diff.rank()];
            shape[0] = b;
            g.broadcast_div(&scale.reshape(shape.as_slice())?)?
        }
    };
    Ok(g.detach())
}

/// 0.5 mean((z_hat - stopgrad(z_hat - g))^2): its gradient with respect
/// to z_hat is g divided by the element count.
pub fn dmd_surrogate(z_hat: &Tensor, g: &Tensor) -> Result<Tensor> {
    let target = (z_hat.detach() - g)?.detach();
    Ok(((z_hat - target)?.sqr()?.mean_all()? * 0.5)?)
}

/// Draws one t'' per sample uniformly from the atom set.
pub fn sample_t_double_prime(atoms: &[f64], n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| atoms[rng.random_range(0..atoms.len())]).collect()
}

pub struct AdversarialLosses {
    /// Generator loss; carries gradients back to z_hat.
    pub l_adv: Tensor,
    /// Discriminator loss; only the discriminator receives gradients.
    pub l_disc: Tensor,
    pub t_double_prime: Vec<f64>,
}

/// Least-squares GAN losses from patch scores:
/// l_adv = mean((d_fake - 1)^2),
/// l_disc = 0.5 (mean(d_fake_detached^2) + mean((d_real - 1)^2)).
pub fn lsgan_losses(d_fake: &Tensor, d_fake_detached: &Tensor, d_real: &Tensor) -> Result<(Tensor, Tensor)> {
    let l_adv = (d_fake - 1.0)?.sqr()?.mean_all()?;
    let l_disc = ((d_fake_detached.sqr()?.mean_all()? + (d_real - 1.0)?.sqr()?.mean_all()?)? * 0.5)?;
    Ok((l_adv, l_disc))
}

/// Perturbs real and generated latents at a shared t'', runs both through
/// the frozen teacher (conditional) and scores the teacher outputs.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_losses<T: VelocityModel + ?Sized>(
    disc: &Discriminator,
    teacher: &T,
    s: &NoiseSchedule,
    z_h: &Tensor,
    z_hat: &Tensor,
    z_l: Option<&Tensor>,
    atoms: &[f64],
    rng: &mut SeededRng,
) -> Result<AdversarialLosses> {
    let b = z_h.dims()[0];
    let t = sample_t_double_prime(atoms, b, rng);
    let eps_real = rng.randn(z_h.dims(), z_h.dtype(), z_h.device())?;
    let eps_fake = rng.randn(z_h.dims(), z_h.dtype(), z_h.device())?;
    let real = diffuse_forward(s, &z_h.detach(), &t, &eps_real)?;
    let fake = diffuse_forward(s, z_hat, &t, &eps_fake)?;
    let f_real = teacher.predict_v(&real, &t, z_l)?.detach();
    let f_fake = teacher.predict_v(&fake, &t, z_l)?;
    let d_fake = disc.forward(&f_fake)?;
    let d_fake_detached = disc.forward(&f_fake.detach())?;
    let d_real = disc.forward(&f_real)?;
    let (l_adv, l_disc) = lsgan_losses(&d_fake, &d_fake_detached, &d_real)?;
    Ok(AdversarialLosses { l_adv, l_disc, t_double_prime: t })
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
