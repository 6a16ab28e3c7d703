use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Gaussian mixture over t, clipped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepDistribution {
    /// (center, standard deviation) per mode.
    pub modes: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl Default for TimestepDistribution {
    /// Equal-weight modes at the four-step sampling times with std 0.1.
    fn default() -> Self {
        Self { modes: vec![(0.25, 0.1), (0.5, 0.1), (0.75, 0.1), (1.0, 0.1)], weights: vec![0.25; 4] }
    }
}

impl TimestepDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() != self.weights.len() {
            return invalid("timestep distribution needs one weight per mode");
        }
        if self.weights.iter().any(|&w| w < 0.0) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("timestep mixture weights must be a simplex");
        }
        if self.modes.iter().any(|&(_, s)| s < 0.0 || !s.is_finite()) {
            return invalid("timestep mode std must be finite and non-negative");
        }
        Ok(())
    }

    /// Mixture density at `t` before clipping.
    pub fn density(&self, t: f64) -> f64 {
        self.modes
            .iter()
            .zip(&self.weights)
            .map(|(&(mu, sd), &w)| {
                let z = (t - mu) / sd;
                w * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u: f64 = rng.random();
        let mut idx = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            if u < w {
                idx = i;
                break;
            }
            u -= w;
        }
        let (mu, sd) = self.modes[idx];
        let t = if sd == 0.0 { mu } else { Normal::new(mu, sd).expect("validated std").sample(rng) };
        t.clamp(0.0, 1.0)
    }
}

pub fn sample_timestep<R: Rng + ?Sized>(pi: &TimestepDistribution, rng: &mut R) -> f64 {
    pi.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_mode_is_constant() {
        let pi = TimestepDistribution { modes: vec![(0.5, 0.0)], weights: vec![1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| pi.sample(&mut rng) == 0.5));
    }

    #[test]
    fn draws_are_clipped() {
        let pi = TimestepDistribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| (0.0..=1.0).contains(&pi.sample(&mut rng))));
    }

    #[test]
    fn histogram_matches_mixture_density() {
        // Chi-square against bin probabilities integrated from the density;
        // the two boundary bins absorb the clipped tails.
        let pi = TimestepDistribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let t = pi.sample(&mut rng);
            counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let mut probs = vec![0.0; bins];
        let steps = 2000;
        let lo = -1.0;
        let hi = 2.0;
        let dt = (hi - lo) / steps as f64;
        for k in 0..steps {
            let t = lo + (k as f64 + 0.5) * dt;
            let b = ((t.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            probs[b] += pi.density(t) * dt;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 19 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }
}
