//! Analog lowpass prototypes normalized to a 1 rad/s cutoff, in
//! zero/pole/gain form.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::special::{arc_jac_sc1, ellipj, ellipk, ellipk_complement};

/// Passband ripple of the Chebyshev type-I and elliptic designs, dB.
pub const PASSBAND_RIPPLE_DB: f64 = 1.0;
/// Stopband attenuation of the elliptic design, dB.
pub const ELLIPTIC_STOPBAND_DB: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct Zpk {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
}

impl Zpk {
    /// Frequency response at complex frequency `s`.
    pub fn response(&self, s: Complex64) -> Complex64 {
        // Divide factor by factor so large |s| cannot overflow.
        let mut h = Complex64::new(self.gain, 0.0);
        let n = self.zeros.len().max(self.poles.len());
        for i in 0..n {
            if let Some(z) = self.zeros.get(i) {
                h *= s - z;
            }
            if let Some(p) = self.poles.get(i) {
                h /= s - p;
            }
        }
        h
    }

    pub fn magnitude_db(&self, omega: f64) -> f64 {
        20.0 * self.response(Complex64::new(0.0, omega)).norm().log10()
    }
}

pub fn butterworth(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect();
    Zpk { zeros: vec![], poles, gain: 1.0 }
}

pub fn chebyshev1(order: usize, ripple_db: f64) -> Zpk {
    let n = order as f64;
    let eps = (10f64.powf(0.1 * ripple_db) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / n;
    let poles: Vec<Complex64> = (0..order)
        .map(|i| {
            let m = -(n - 1.0) + 2.0 * i as f64;
            let theta = PI * m / (2.0 * n);
            -(Complex64::new(mu, theta)).sinh()
        })
        .collect();
    let mut gain = poles.iter().map(|p| -p).product::<Complex64>().re;
    if order % 2 == 0 {
        gain /= (1.0 + eps * eps).sqrt();
    }
    Zpk { zeros: vec![], poles, gain }
}

/// Coefficients of the Bessel polynomial, lowest degree first.
fn bessel_polynomial(order: usize) -> Vec<f64> {
    let n = order;
    (0..=n)
        .map(|k| {
            // (2n-k)! / (2^(n-k) k! (n-k)!)
            let mut v = 1.0f64;
            for j in (n - k + 1)..=(2 * n - k) {
                v *= j as f64;
            }
            for j in 1..=k {
                v /= j as f64;
            }
            v / 2f64.powi((n - k) as i32)
        })
        .collect()
}

fn poly_eval(coeffs: &[f64], x: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
}

/// All complex roots of a real polynomial by Aberth iteration.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let deriv: Vec<f64> = monic.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
    let radius = monic[..deg].iter().map(|c| c.abs()).fold(0.0, f64::max).powf(1.0 / deg as f64) + 1.0;
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|k| Complex64::from_polar(radius * 0.5, 2.0 * PI * (k as f64 + 0.25) / deg as f64))
        .collect();
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..deg {
            let z = roots[i];
            let ratio = poly_eval(&monic, z) / poly_eval(&deriv, z);
            let repulsion: Complex64 = (0..deg).filter(|&j| j != i).map(|j| 1.0 / (z - roots[j])).sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            roots[i] = z - step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-15 {
            break;
        }
    }
    roots
}

/// Bessel-Thomson prototype normalized so that |H(j·1)| = 1/√2.
pub fn bessel(order: usize) -> Zpk {
    let coeffs = bessel_polynomial(order);
    let mut poles = poly_roots(&coeffs);
    for p in poles.iter_mut() {
        if p.im.abs() < 1e-12 {
            p.im = 0.0;
        }
    }
    let dc = coeffs[0];
    let mag = |w: f64| (dc / poly_eval(&coeffs, Complex64::new(0.0, w))).norm();
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let (mut lo, mut hi) = (1e-3, 1.0);
    while mag(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mag(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w3 = 0.5 * (lo + hi);
    for p in poles.iter_mut() {
        *p /= w3;
    }
    let gain = poles.iter().map(|p| -p).product::<Complex64>().re;
    Zpk { zeros: vec![], poles, gain }
}

/// Solves K(m)/K(1−m) = ratio for m by bisection.
fn solve_modulus_ratio(ratio: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ellipk(mid) / ellipk_complement(mid) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Elliptic (Cauer) prototype with the given passband ripple and stopband
/// attenuation.
pub fn elliptic(order: usize, ripple_db: f64, stop_db: f64) -> Zpk {
    let n = order as f64;
    let eps = (10f64.powf(0.1 * ripple_db) - 1.0).sqrt();
    if order == 1 {
        let p = -(1.0 / eps);
        return Zpk { zeros: vec![], poles: vec![Complex64::new(p, 0.0)], gain: -p };
    }
    let ck1 = eps / (10f64.powf(0.1 * stop_db) - 1.0).sqrt();
    let ck1_sq = ck1 * ck1;
    let k_ck1 = ellipk(ck1_sq);
    let k_ck1p = ellipk_complement(ck1_sq);
    let m = solve_modulus_ratio(n * k_ck1 / k_ck1p);
    let capk = ellipk(m);

    let js: Vec<f64> = ((1 - order % 2)..order).step_by(2).map(|j| j as f64).collect();
    let sncndn: Vec<(f64, f64, f64)> = js.iter().map(|j| ellipj(j * capk / n, m)).collect();

    let mut zeros = Vec::new();
    for &(s, _, _) in &sncndn {
        if s.abs() > 1e-12 {
            let z = Complex64::new(0.0, 1.0 / (m.sqrt() * s));
            zeros.push(z);
        }
    }
    let conj: Vec<Complex64> = zeros.iter().map(|z| z.conj()).collect();
    zeros.extend(conj);

    let r = arc_jac_sc1(1.0 / eps, ck1_sq);
    let v0 = capk * r / (n * k_ck1);
    let (sv, cv, dv) = ellipj(v0, 1.0 - m);
    let mut poles: Vec<Complex64> = sncndn
        .iter()
        .map(|&(s, c, d)| {
            let num = Complex64::new(c * d * sv * cv, s * dv);
            -num / (1.0 - (d * sv).powi(2))
        })
        .collect();
    let extra: Vec<Complex64> = poles.iter().filter(|p| p.im.abs() > 1e-12).map(|p| p.conj()).collect();
    if order % 2 == 0 {
        let all: Vec<Complex64> = poles.iter().map(|p| p.conj()).collect();
        poles.extend(all);
    } else {
        poles.extend(extra);
    }
    let mut gain = (poles.iter().map(|p| -p).product::<Complex64>()
        / zeros.iter().map(|z| -z).product::<Complex64>())
    .re;
    if order % 2 == 0 {
        gain /= (1.0 + eps * eps).sqrt();
    }
    Zpk { zeros, poles, gain }
}
