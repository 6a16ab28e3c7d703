//! Lower-frequency replacement: the post-processing baseline that splices
//! the input's low band into a generated spectrogram pair and rescales the
//! generated high band by the energy ratio measured around the cutoff.

use ndarray::Array2;

use super::mel::MelSpectrogram;
use crate::error::{invalid, Result};

/// Mel rows straddling the cutoff used to measure the energy ratio.
pub const RATIO_BAND_ROWS: usize = 10;

#[derive(Debug, Clone)]
pub struct LfrOutput {
    pub mel: MelSpectrogram,
    pub stft: Array2<f64>,
    /// Linear-magnitude gain applied to the generated rows above cutoff.
    pub scale: f64,
    /// Set when the ratio band carried no energy above the floor and the
    /// scale fell back to 1.
    pub degenerate_band: bool,
}

fn ratio_band(centers: &[f64], cutoff_hz: f64) -> std::ops::Range<usize> {
    let n = centers.len();
    let first_above = centers.iter().position(|&c| c >= cutoff_hz).unwrap_or(n);
    let half = RATIO_BAND_ROWS / 2;
    let lo = first_above.saturating_sub(half).min(n.saturating_sub(RATIO_BAND_ROWS));
    lo..(lo + RATIO_BAND_ROWS).min(n)
}

pub fn lfr_postprocess(
    gen_mel: &MelSpectrogram,
    gen_stft: &Array2<f64>,
    input_mel: &MelSpectrogram,
    input_stft: &Array2<f64>,
    cutoff_hz: f64,
) -> Result<LfrOutput> {
    let cfg = &input_mel.config;
    if gen_mel.values.dim() != input_mel.values.dim() || gen_stft.dim() != input_stft.dim() {
        return invalid("generated and input spectrograms differ in shape");
    }
    if gen_stft.nrows() != cfg.n_bins() {
        return invalid(format!("stft has {} rows, config implies {}", gen_stft.nrows(), cfg.n_bins()));
    }
    let nyquist = cfg.sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return invalid(format!("cutoff {cutoff_hz} Hz outside (0, {nyquist})"));
    }

    let mel_centers = cfg.mel_centers_hz();
    let band = ratio_band(&mel_centers, cutoff_hz);
    let floor = cfg.log_floor;
    let band_energy = |m: &MelSpectrogram| -> (f64, bool) {
        let rows = m.values.slice(ndarray::s![band.clone(), ..]);
        let sum: f64 = rows.iter().map(|&v| (v as f64).exp()).sum();
        let at_floor = rows.iter().all(|&v| (v as f64).exp() <= floor * (1.0 + 1e-6));
        (sum, at_floor)
    };
    let (e_in, in_floor) = band_energy(input_mel);
    let (e_gen, gen_floor) = band_energy(gen_mel);
    let degenerate_band = in_floor || gen_floor || e_gen <= 0.0;
    let scale = if degenerate_band { 1.0 } else { e_in / e_gen };
    if degenerate_band {
        log::warn!("LFR ratio band around {cutoff_hz} Hz has no energy; using unit scale");
    }

    let log_scale = scale.ln() as f32;
    let mut mel = gen_mel.values.clone();
    for (r, &c) in mel_centers.iter().enumerate() {
        if c < cutoff_hz {
            mel.row_mut(r).assign(&input_mel.values.row(r));
        } else {
            let floor_v = input_mel.floor_value();
            mel.row_mut(r).mapv_inplace(|v| (v + log_scale).max(floor_v));
        }
    }
    let mut stft = gen_stft.clone();
    for (r, c) in cfg.bin_centers_hz().into_iter().enumerate() {
        if c < cutoff_hz {
            stft.row_mut(r).assign(&input_stft.row(r));
        } else {
            stft.row_mut(r).mapv_inplace(|v| v * scale);
        }
    }
    Ok(LfrOutput { mel: MelSpectrogram::new(mel, cfg.clone())?, stft, scale, degenerate_band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel::MelConfig;

    fn synthetic(cfg: &MelConfig, frames: usize, seed: u32) -> (MelSpectrogram, Array2<f64>) {
        let mel = Array2::from_shape_fn((cfg.n_mels, frames), |(r, c)| {
            -2.0 + ((r as u32 * 7 + c as u32 * 13 + seed) % 17) as f32 * 0.1
        });
        let stft = Array2::from_shape_fn((cfg.n_bins(), frames), |(r, c)| 0.1 + ((r + 3 * c) % 5) as f64);
        (MelSpectrogram::new(mel, cfg.clone()).unwrap(), stft)
    }

    #[test]
    fn rows_below_cutoff_are_bit_equal_to_input() {
        let cfg = MelConfig::desk();
        let (gm, gs) = synthetic(&cfg, 20, 1);
        let (im, is) = synthetic(&cfg, 20, 5);
        let out = lfr_postprocess(&gm, &gs, &im, &is, 2000.0).unwrap();
        for (r, c) in cfg.mel_centers_hz().into_iter().enumerate() {
            if c < 2000.0 {
                assert_eq!(out.mel.values.row(r), im.values.row(r));
            }
        }
        for (r, c) in cfg.bin_centers_hz().into_iter().enumerate() {
            if c < 2000.0 {
                assert_eq!(out.stft.row(r), is.row(r));
            }
        }
    }

    #[test]
    fn identical_inputs_pass_through() {
        let cfg = MelConfig::desk();
        let (m, s) = synthetic(&cfg, 12, 2);
        let out = lfr_postprocess(&m, &s, &m, &s, 3000.0).unwrap();
        assert_eq!(out.scale, 1.0);
        assert_eq!(out.mel.values, m.values);
        assert_eq!(out.stft, s);
    }

    #[test]
    fn fourfold_band_energy_scales_by_quarter() {
        let cfg = MelConfig::desk();
        let (im, is) = synthetic(&cfg, 16, 3);
        let mut gm = im.clone();
        gm.values.mapv_inplace(|v| v + 4f32.ln());
        let gs = is.mapv(|v| v * 4.0);
        let out = lfr_postprocess(&gm, &gs, &im, &is, 2500.0).unwrap();
        assert!((out.scale - 0.25).abs() < 1e-6, "scale {}", out.scale);
        for (r, c) in cfg.bin_centers_hz().into_iter().enumerate() {
            if c >= 2500.0 {
                for (o, i) in out.stft.row(r).iter().zip(is.row(r)) {
                    assert!((o - i).abs() < 1e-5 * i.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn floor_band_falls_back_to_unit_scale() {
        let cfg = MelConfig::desk();
        let floor = (cfg.log_floor.ln()) as f32;
        let m = MelSpectrogram::new(Array2::from_elem((cfg.n_mels, 4), floor), cfg.clone()).unwrap();
        let s = Array2::zeros((cfg.n_bins(), 4));
        let out = lfr_postprocess(&m, &s, &m, &s, 1000.0).unwrap();
        assert!(out.degenerate_band);
        assert_eq!(out.scale, 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = MelConfig::desk();
        let (m1, s1) = synthetic(&cfg, 4, 0);
        let (m2, s2) = synthetic(&cfg, 5, 0);
        assert!(lfr_postprocess(&m1, &s1, &m2, &s2, 1000.0).is_err());
    }
}
