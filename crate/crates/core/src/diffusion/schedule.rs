use std::f64::consts::FRAC_PI_2;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// alpha(t) = cos(pi t / 2)
    Cosine,
}

/// Variance-preserving schedule over continuous t in [0, 1]:
/// alpha(t)^2 + sigma(t)^2 = 1, alpha(0) = 1, sigma(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    /// Size of the discrete training grid (t = k / steps).
    pub steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { kind: ScheduleKind::Cosine, steps: 1000 }
    }
}

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Cosine => {
                if t >= 1.0 {
                    0.0
                } else {
                    (FRAC_PI_2 * t.max(0.0)).cos()
                }
            }
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Cosine => (FRAC_PI_2 * t.clamp(0.0, 1.0)).sin(),
        }
    }

    /// Half log-SNR, log(alpha / sigma).
    pub fn lambda(&self, t: f64) -> f64 {
        (self.alpha(t) / self.sigma(t)).ln()
    }

    /// Grid point `k` of the discrete training grid.
    pub fn grid_time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    pub(crate) fn check_times(ts: &[f64]) -> Result<()> {
        match ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            Some(t) => invalid(format!("timestep {t} outside [0, 1]")),
            None => Ok(()),
        }
    }
}

/// Per-sample coefficients broadcastable against `like` (shape
/// `[B, ...]` with one value per leading index).
pub(crate) fn per_sample(values: &[f64], like: &Tensor) -> Result<Tensor> {
    let dims = like.dims();
    if dims.is_empty() || dims[0] != values.len() {
        return invalid(format!("{} timesteps for a batch of shape {:?}", values.len(), dims));
    }
    let mut shape = vec![1usize; dims.len()];
    shape[0] = values.len();
    let t = Tensor::from_slice(values, shape.as_slice(), like.device())?;
    Ok(if like.dtype() == DType::F64 { t } else { t.to_dtype(like.dtype())? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_preserving_on_dense_grid() {
        let s = NoiseSchedule::default();
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let (a, b) = (s.alpha(t), s.sigma(t));
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.sigma(0.0), 0.0);
        assert_eq!(s.alpha(1.0), 0.0);
    }

    #[test]
    fn alpha_is_non_increasing() {
        let s = NoiseSchedule::default();
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let a = s.alpha(k as f64 / 1000.0);
            assert!(a <= prev);
            prev = a;
        }
    }
}
