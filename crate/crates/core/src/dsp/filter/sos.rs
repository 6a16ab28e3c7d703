//! Bilinear-transform discretization and second-order-section filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::prototype::Zpk;

/// One biquad: b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct DigitalFilter {
    pub sections: Vec<Biquad>,
    pub poles: Vec<Complex64>,
}

/// Maps an analog prototype with 1 rad/s cutoff to a digital lowpass at
/// `cutoff_hz`, with frequency pre-warping so the cutoff lands exactly.
pub fn digital_lowpass(proto: &Zpk, cutoff_hz: f64, sample_rate: f64) -> DigitalFilter {
    let fs2 = 2.0 * sample_rate;
    let warped = fs2 * (PI * cutoff_hz / sample_rate).tan();

    let zeros: Vec<Complex64> = proto.zeros.iter().map(|z| z * warped).collect();
    let poles: Vec<Complex64> = proto.poles.iter().map(|p| p * warped).collect();
    let degree = poles.len() - zeros.len();
    let gain = proto.gain * warped.powi(degree as i32);

    let to_z = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let mut zz: Vec<Complex64> = zeros.iter().map(to_z).collect();
    zz.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    let zp: Vec<Complex64> = poles.iter().map(to_z).collect();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let kz = gain * (num / den).re;

    DigitalFilter { sections: zpk_to_sos(&zz, &zp, kz), poles: zp }
}

/// Splits conjugate pairs: one representative per pair plus the real values.
fn split_pairs(values: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
    let tol = 1e-9;
    let complex = values.iter().filter(|v| v.im > tol).copied().collect();
    let real = values.iter().filter(|v| v.im.abs() <= tol).map(|v| v.re).collect();
    (complex, real)
}

fn zpk_to_sos(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Vec<Biquad> {
    let (mut pc, mut pr) = split_pairs(poles);
    let (mut zc, mut zr) = split_pairs(zeros);
    // Poles closest to the unit circle first, each grabbing its nearest zeros.
    pc.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    pr.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());

    let mut sections = Vec::new();
    let take_zero_pair = |target: Complex64, zc: &mut Vec<Complex64>, zr: &mut Vec<f64>| -> [f64; 3] {
        if let Some((idx, _)) = zc
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).norm().partial_cmp(&(b.1 - target).norm()).unwrap())
        {
            let z = zc.remove(idx);
            return [1.0, -2.0 * z.re, z.norm_sqr()];
        }
        match (zr.pop(), zr.pop()) {
            (Some(a), Some(b)) => [1.0, -(a + b), a * b],
            (Some(a), None) => [1.0, -a, 0.0],
            _ => [1.0, 0.0, 0.0],
        }
    };

    for p in pc {
        let b = take_zero_pair(p, &mut zc, &mut zr);
        sections.push(Biquad { b, a: [1.0, -2.0 * p.re, p.norm_sqr()] });
    }
    while !pr.is_empty() {
        let p1 = pr.remove(0);
        let a = if pr.is_empty() {
            [1.0, -p1, 0.0]
        } else {
            let p2 = pr.remove(0);
            [1.0, -(p1 + p2), p1 * p2]
        };
        let order = if a[2] == 0.0 { 1 } else { 2 };
        let b = if order == 1 {
            match zr.pop() {
                Some(z) => [1.0, -z, 0.0],
                None => [1.0, 0.0, 0.0],
            }
        } else {
            take_zero_pair(Complex64::new(p1, 0.0), &mut zc, &mut zr)
        };
        sections.push(Biquad { b, a });
    }
    if let Some(first) = sections.first_mut() {
        for c in first.b.iter_mut() {
            *c *= gain;
        }
    }
    sections
}

impl DigitalFilter {
    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.norm() < 1.0 - 1e-12)
    }

    /// Causal filtering, cascaded transposed direct form II.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0f64, 0.0f64);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[1] * y + z2;
                z2 = s.b[2] * xin - s.a[2] * y;
                *v = y;
            }
        }
        x
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (s.a[0] + s.a[1] * z1 + s.a[2] * z2))
            .product()
    }
}
