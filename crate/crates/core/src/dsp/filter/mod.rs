//! Low-resolution simulation filters: randomized IIR lowpass designs in the
//! Chebyshev type-I, Butterworth, Bessel and elliptic families.

pub mod prototype;
pub mod sos;
pub mod special;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{invalid, Error, Result};
pub use prototype::{ELLIPTIC_STOPBAND_DB, PASSBAND_RIPPLE_DB};
pub use sos::{Biquad, DigitalFilter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterFamily {
    Chebyshev,
    Butterworth,
    Bessel,
    Elliptic,
}

impl FilterFamily {
    pub const ALL: [FilterFamily; 4] = [
        FilterFamily::Chebyshev,
        FilterFamily::Butterworth,
        FilterFamily::Bessel,
        FilterFamily::Elliptic,
    ];

    pub fn prototype(self, order: usize) -> prototype::Zpk {
        match self {
            FilterFamily::Chebyshev => prototype::chebyshev1(order, PASSBAND_RIPPLE_DB),
            FilterFamily::Butterworth => prototype::butterworth(order),
            FilterFamily::Bessel => prototype::bessel(order),
            FilterFamily::Elliptic => prototype::elliptic(order, PASSBAND_RIPPLE_DB, ELLIPTIC_STOPBAND_DB),
        }
    }

    /// Peak of the magnitude response, dB. Chebyshev and elliptic designs
    /// ripple below 0 dB and the other two are monotone.
    pub fn peak_gain_db(self) -> f64 {
        0.0
    }
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FilterFamily::Chebyshev => "chebyshev",
            FilterFamily::Butterworth => "butterworth",
            FilterFamily::Bessel => "bessel",
            FilterFamily::Elliptic => "elliptic",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub family: FilterFamily,
    pub order: usize,
    pub cutoff_hz: f64,
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} order {} @ {:.1} Hz", self.family, self.order, self.cutoff_hz)
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(2..=10).contains(&self.order) {
            return invalid(format!("filter order {} outside [2, 10]", self.order));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return invalid(format!("cutoff {} Hz outside (0, {nyquist})", self.cutoff_hz));
        }
        Ok(())
    }

    pub fn design(&self, sample_rate: u32) -> Result<DigitalFilter> {
        self.validate(sample_rate)?;
        let filter = sos::digital_lowpass(&self.family.prototype(self.order), self.cutoff_hz, sample_rate as f64);
        if !filter.is_stable() {
            return Err(Error::UnstableFilter {
                spec: self.to_string(),
                reason: "pole on or outside the unit circle".into(),
            });
        }
        Ok(filter)
    }

    /// Attenuation in dB at `freq_hz` as documented by the analog prototype,
    /// evaluated at the bilinear-warped frequency.
    pub fn documented_attenuation_db(&self, freq_hz: f64, sample_rate: u32) -> f64 {
        self.documented_attenuation_curve(&[freq_hz], sample_rate)[0]
    }

    /// [`Self::documented_attenuation_db`] at many frequencies, building the
    /// prototype once.
    pub fn documented_attenuation_curve(&self, freqs_hz: &[f64], sample_rate: u32) -> Vec<f64> {
        let fs = sample_rate as f64;
        let warp = |f: f64| (std::f64::consts::PI * f / fs).tan();
        let proto = self.family.prototype(self.order);
        let wc = warp(self.cutoff_hz);
        freqs_hz.iter().map(|&f| -proto.magnitude_db(warp(f) / wc)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowpassSimConfig {
    pub cutoff_range: [f64; 2],
    pub order_range: [usize; 2],
    pub families: Vec<FilterFamily>,
    pub rng_seed: u64,
    /// Resample down to roughly twice the cutoff and back after filtering.
    pub rate_round_trip: bool,
}

impl LowpassSimConfig {
    /// 2–16 kHz cutoffs for 48 kHz audio.
    pub fn paper() -> Self {
        Self {
            cutoff_range: [2000.0, 16000.0],
            order_range: [2, 10],
            families: FilterFamily::ALL.to_vec(),
            rng_seed: 0,
            rate_round_trip: true,
        }
    }

    /// The paper range scaled by 16/48 for 16 kHz audio.
    pub fn desk() -> Self {
        Self { cutoff_range: [667.0, 5333.0], ..Self::paper() }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.families.is_empty() {
            return invalid("filter family set is empty");
        }
        let [lo, hi] = self.cutoff_range;
        if !(lo > 0.0 && lo <= hi && hi < sample_rate as f64 / 2.0) {
            return invalid(format!("cutoff range [{lo}, {hi}] not within Nyquist of {sample_rate} Hz"));
        }
        let [olo, ohi] = self.order_range;
        if !(2 <= olo && olo <= ohi && ohi <= 10) {
            return invalid(format!("order range [{olo}, {ohi}] not within [2, 10]"));
        }
        Ok(())
    }
}

/// Draws a filter: family and order uniform over their sets, cutoff uniform
/// over the integer frequencies in the cutoff range.
pub fn sample_filter<R: Rng + ?Sized>(cfg: &LowpassSimConfig, rng: &mut R) -> Result<FilterSpec> {
    if cfg.families.is_empty() {
        return invalid("filter family set is empty");
    }
    let family = cfg.families[rng.random_range(0..cfg.families.len())];
    let order = rng.random_range(cfg.order_range[0]..=cfg.order_range[1]);
    let [lo, hi] = cfg.cutoff_range;
    let cutoff_hz = if hi.floor() > lo.ceil() {
        rng.random_range(lo.ceil() as i64..=hi.floor() as i64) as f64
    } else {
        lo
    };
    Ok(FilterSpec { family, order, cutoff_hz })
}

pub fn lowpass_apply(w: &Waveform, spec: &FilterSpec) -> Result<Waveform> {
    let filter = spec.design(w.sample_rate())?;
    let out = filter.apply(&w.to_f64());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::UnstableFilter { spec: spec.to_string(), reason: "non-finite output".into() });
    }
    Waveform::from_f64(&out, w.sample_rate())
}
