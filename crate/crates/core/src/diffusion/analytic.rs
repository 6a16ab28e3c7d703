//! Closed-form velocity fields for Gaussian data, used as oracles.

use candle_core::Tensor;

use super::sampler::VelocityModel;
use super::schedule::{per_sample, NoiseSchedule};
use crate::error::Result;

/// Exact v-prediction for data distributed as N(mean, std^2) elementwise,
/// ignoring any condition.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVelocity {
    pub mean: f64,
    pub std: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianVelocity {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std, schedule: NoiseSchedule::default() }
    }

    /// Score of the diffused marginal N(alpha mean, alpha^2 std^2 + sigma^2).
    pub fn marginal_score(&self, x: f64, t: f64) -> f64 {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        -(x - a * self.mean) / (a * a * self.std * self.std + s * s)
    }
}

impl VelocityModel for GaussianVelocity {
    fn predict_v(&self, z_t: &Tensor, t: &[f64], _cond: Option<&Tensor>) -> Result<Tensor> {
        let s = &self.schedule;
        let var = self.std * self.std;
        // x0_hat = mean + alpha var (z - alpha mean) / total
        // eps_hat = sigma (z - alpha mean) / total
        // v = alpha eps_hat - sigma x0_hat
        let mut gain = Vec::with_capacity(t.len());
        let mut offset = Vec::with_capacity(t.len());
        for &t in t {
            let (a, b) = (s.alpha(t), s.sigma(t));
            let total = a * a * var + b * b;
            let g = (a * b - b * a * var) / total;
            gain.push(g);
            offset.push(-g * a * self.mean - b * self.mean);
        }
        Ok(z_t.broadcast_mul(&per_sample(&gain, z_t)?)?.broadcast_add(&per_sample(&offset, z_t)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::vparam::{eps_from_v, score_from_eps};
    use candle_core::Device;

    #[test]
    fn network_score_equals_marginal_score() {
        let m = GaussianVelocity::new(0.4, 1.7);
        let xs = [-2.0, 0.0, 0.3, 3.1];
        let z = Tensor::new(&xs, &Device::Cpu).unwrap();
        for &t in &[0.1, 0.5, 0.95] {
            let v = m.predict_v(&z, &[t; 4], None).unwrap();
            let eps = eps_from_v(&m.schedule, &z, &v, &[t; 4]).unwrap();
            let score = score_from_eps(&m.schedule, &eps, &[t; 4]).unwrap().to_vec1::<f64>().unwrap();
            for (x, sc) in xs.iter().zip(score) {
                assert!((sc - m.marginal_score(*x, t)).abs() < 1e-10);
            }
        }
    }
}
