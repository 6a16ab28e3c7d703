//! v-parameterization algebra under a variance-preserving schedule.
//!
//! With z_t = alpha z0 + sigma eps and v = alpha eps - sigma z0:
//! z0 = alpha z_t - sigma v, eps = sigma z_t + alpha v.

use candle_core::Tensor;

use super::schedule::{per_sample, NoiseSchedule};
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch { expected: a.dims().to_vec(), got: b.dims().to_vec() });
    }
    Ok(())
}

fn coeffs(s: &NoiseSchedule, t: &[f64], like: &Tensor) -> Result<(Tensor, Tensor)> {
    NoiseSchedule::check_times(t)?;
    let a: Vec<f64> = t.iter().map(|&t| s.alpha(t)).collect();
    let b: Vec<f64> = t.iter().map(|&t| s.sigma(t)).collect();
    Ok((per_sample(&a, like)?, per_sample(&b, like)?))
}

/// alpha(t) z0 + sigma(t) eps
pub fn diffuse_forward(s: &NoiseSchedule, z0: &Tensor, t: &[f64], eps: &Tensor) -> Result<Tensor> {
    same_shape(z0, eps)?;
    let (a, b) = coeffs(s, t, z0)?;
    Ok((z0.broadcast_mul(&a)? + eps.broadcast_mul(&b)?)?)
}

/// alpha(t) eps - sigma(t) z0
pub fn v_target(s: &NoiseSchedule, z0: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    same_shape(z0, eps)?;
    let (a, b) = coeffs(s, t, z0)?;
    Ok((eps.broadcast_mul(&a)? - z0.broadcast_mul(&b)?)?)
}

/// alpha(t) z_t - sigma(t) v
pub fn x0_from_v(s: &NoiseSchedule, z_t: &Tensor, v: &Tensor, t: &[f64]) -> Result<Tensor> {
    same_shape(z_t, v)?;
    let (a, b) = coeffs(s, t, z_t)?;
    Ok((z_t.broadcast_mul(&a)? - v.broadcast_mul(&b)?)?)
}

/// sigma(t) z_t + alpha(t) v
pub fn eps_from_v(s: &NoiseSchedule, z_t: &Tensor, v: &Tensor, t: &[f64]) -> Result<Tensor> {
    same_shape(z_t, v)?;
    let (a, b) = coeffs(s, t, z_t)?;
    Ok((z_t.broadcast_mul(&b)? + v.broadcast_mul(&a)?)?)
}

/// Score of the diffused marginal, -eps / sigma(t).
pub fn score_from_eps(s: &NoiseSchedule, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    NoiseSchedule::check_times(t)?;
    if let Some(&bad) = t.iter().find(|&&t| s.sigma(t) == 0.0) {
        return Err(Error::UndefinedScore { t: bad });
    }
    let inv: Vec<f64> = t.iter().map(|&t| -1.0 / s.sigma(t)).collect();
    Ok(eps.broadcast_mul(&per_sample(&inv, eps)?)?)
}
