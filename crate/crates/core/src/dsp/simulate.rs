use rand::Rng;

use super::filter::{lowpass_apply, sample_filter, FilterSpec, LowpassSimConfig};
use super::resample::resample_sinc;
use super::Waveform;
use crate::error::Result;

/// Intermediate rate for the round trip: the smallest multiple of 100 Hz at
/// or above twice the cutoff.
pub fn round_trip_rate(cutoff_hz: f64) -> u32 {
    ((2.0 * cutoff_hz / 100.0).ceil() as u32).max(1) * 100
}

/// Lowpass-filters `w` with `spec` and, if requested, passes it through a
/// low sample rate and back. Output has the length and rate of `w`.
pub fn degrade(w: &Waveform, spec: &FilterSpec, rate_round_trip: bool) -> Result<Waveform> {
    let filtered = lowpass_apply(w, spec)?;
    if !rate_round_trip {
        return Ok(filtered);
    }
    let low_rate = round_trip_rate(spec.cutoff_hz);
    if low_rate >= w.sample_rate() {
        return Ok(filtered);
    }
    let down = resample_sinc(&filtered, low_rate)?;
    resample_sinc(&down, w.sample_rate())?.fit_to_len(w.len())
}

/// Draws a filter from `cfg` and degrades `w` with it.
pub fn simulate_lr<R: Rng + ?Sized>(
    w: &Waveform,
    cfg: &LowpassSimConfig,
    rng: &mut R,
) -> Result<(Waveform, FilterSpec)> {
    cfg.validate(w.sample_rate())?;
    let spec = sample_filter(cfg, rng)?;
    Ok((degrade(w, &spec, cfg.rate_round_trip)?, spec))
}
