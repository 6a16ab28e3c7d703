use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub omega: f64,
}

impl GuidanceConfig {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega >= 0.0 && omega.is_finite()) {
            return invalid(format!("guidance scale must be finite and >= 0, got {omega}"));
        }
        Ok(Self { omega })
    }
}

/// omega * v_cond + (1 - omega) * v_uncond
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, omega: f64) -> Result<Tensor> {
    Ok(((v_cond * omega)? + (v_uncond * (1.0 - omega))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(&[v], &Device::Cpu).unwrap()
    }

    fn val(t: &Tensor) -> f64 {
        t.to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn endpoints_select_one_branch() {
        let (c, u) = (scalar(0.3), scalar(-2.0));
        assert_eq!(val(&cfg_combine(&c, &u, 1.0).unwrap()), 0.3);
        assert_eq!(val(&cfg_combine(&c, &u, 0.0).unwrap()), -2.0);
    }

    #[test]
    fn scale_four_extrapolates() {
        assert_eq!(val(&cfg_combine(&scalar(1.0), &scalar(0.0), 4.0).unwrap()), 4.0);
    }

    #[test]
    fn swapping_omega_swaps_roles() {
        let (c, u) = (scalar(1.7), scalar(0.4));
        for &w in &[0.0, 0.25, 3.0] {
            let a = val(&cfg_combine(&c, &u, w).unwrap());
            let b = val(&cfg_combine(&u, &c, 1.0 - w).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_scale_rejected() {
        assert!(GuidanceConfig::new(-0.1).is_err());
        assert!(GuidanceConfig::new(4.0).is_ok());
    }
}
