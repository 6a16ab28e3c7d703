//! Complete elliptic integrals and Jacobi elliptic functions used by the
//! elliptic (Cauer) prototype.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    a
}

/// Complete elliptic integral of the first kind in parameter form, K(m).
pub fn ellipk(m: f64) -> f64 {
    FRAC_PI_2 / agm(1.0, (1.0 - m).sqrt())
}

/// K(1 − m), computed without forming 1 − m.
pub fn ellipk_complement(m: f64) -> f64 {
    FRAC_PI_2 / agm(1.0, m.sqrt())
}

/// Jacobi elliptic functions (sn, cn, dn) at argument `u`, parameter `m`.
pub fn ellipj(u: f64, m: f64) -> (f64, f64, f64) {
    if m < 1e-9 {
        let t = u.sin();
        let b = u.cos();
        let ai = 0.25 * m * (u - t * b);
        return (t - ai * b, b + ai * t, 1.0 - 0.5 * m * t * t);
    }
    if m >= 0.999_999_999_9 {
        let ai = 0.25 * (1.0 - m);
        let b = u.cosh();
        let t = u.tanh();
        let phi = 1.0 / b;
        let twon = b * u.sinh();
        let sn = t + ai * (twon - u) / (b * b);
        let ph = 2.0 * u.exp().atan() - FRAC_PI_2 + ai * (twon - u) / b;
        let ai = ai * t * phi;
        let cn = phi - ai * (twon - u);
        let dn = phi + ai * (twon + u);
        let _ = ph;
        return (sn, cn, dn);
    }

    // Descending Landen / AGM sequence.
    let mut a = [0.0f64; 10];
    let mut c = [0.0f64; 10];
    a[0] = 1.0;
    let mut b = (1.0 - m).sqrt();
    c[0] = m.sqrt();
    let mut twon = 1.0;
    let mut i = 0usize;
    while (c[i] / a[i]).abs() > f64::EPSILON {
        if i >= 8 {
            break;
        }
        let ai = a[i];
        i += 1;
        c[i] = 0.5 * (ai - b);
        let t = (ai * b).sqrt();
        a[i] = 0.5 * (ai + b);
        b = t;
        twon *= 2.0;
    }
    let mut phi = twon * a[i] * u;
    let mut prev = phi;
    while i > 0 {
        let t = c[i] * phi.sin() / a[i];
        prev = phi;
        phi = (t.asin() + phi) / 2.0;
        i -= 1;
    }
    let sn = phi.sin();
    let cn = phi.cos();
    let dn = cn / (phi - prev).cos();
    (sn, cn, dn)
}

/// Inverse Jacobi sn for complex argument via the Landen transformation.
pub fn arc_jac_sn(w: Complex64, m: f64) -> Complex64 {
    let complement = |kx: Complex64| ((Complex64::new(1.0, 0.0) - kx) * (Complex64::new(1.0, 0.0) + kx)).sqrt();
    let k = m.sqrt();
    if k >= 1.0 {
        return w.atanh();
    }
    let mut ks = vec![k];
    while *ks.last().unwrap() != 0.0 {
        let kn = *ks.last().unwrap();
        let kp = ((1.0 - kn) * (1.0 + kn)).sqrt();
        ks.push((1.0 - kp) / (1.0 + kp));
        if ks.len() > 20 {
            break;
        }
    }
    let big_k: f64 = ks[1..].iter().map(|k| 1.0 + k).product::<f64>() * FRAC_PI_2;
    let mut wn = w;
    for pair in ks.windows(2) {
        let (kn, knext) = (pair[0], pair[1]);
        wn = 2.0 * wn / ((1.0 + knext) * (Complex64::new(1.0, 0.0) + complement(kn * wn)));
    }
    let u = wn.asin() * (2.0 / std::f64::consts::PI);
    u * big_k
}

/// Inverse Jacobi sc with complementary parameter: u such that
/// sc(u, 1 − m) = w.
pub fn arc_jac_sc1(w: f64, m: f64) -> f64 {
    arc_jac_sn(Complex64::new(0.0, w), m).im
}
