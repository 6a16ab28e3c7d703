//! Objective metrics, runtime measurement and the cutoff-sweep harness.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::filter::{FilterSpec, LowpassSimConfig};
use crate::dsp::stft::stft_magnitude;
use crate::dsp::{degrade, Waveform};
use crate::error::{invalid, Result};

/// STFT geometry for the spectral metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub window: usize,
    pub hop: usize,
    /// Floor applied to squared magnitudes before the log.
    pub floor: f64,
}

impl MetricConfig {
    /// 48 kHz audio.
    pub fn paper() -> Self {
        Self { window: 2048, hop: 512, floor: 1e-10 }
    }

    /// 16 kHz audio.
    pub fn desk() -> Self {
        Self { window: 1024, hop: 256, floor: 1e-10 }
    }
}

fn paired_spectra(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    if reference.len() != estimate.len() || reference.sample_rate() != estimate.sample_rate() {
        return invalid(format!(
            "metric inputs differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            reference.len(),
            reference.sample_rate(),
            estimate.len(),
            estimate.sample_rate()
        ));
    }
    if reference.len() < cfg.hop {
        return invalid("metric input shorter than one hop");
    }
    Ok((
        stft_magnitude(reference.samples(), cfg.window, cfg.hop),
        stft_magnitude(estimate.samples(), cfg.window, cfg.hop),
    ))
}

/// Log-spectral distance on floored power spectra, base-10.
pub fn lsd(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (a, b) = paired_spectra(reference, estimate, cfg)?;
    let (bins, frames) = a.dim();
    let mut total = 0.0;
    for t in 0..frames {
        let mut acc = 0.0;
        for f in 0..bins {
            let la = (a[[f, t]] * a[[f, t]]).max(cfg.floor).log10();
            let lb = (b[[f, t]] * b[[f, t]]).max(cfg.floor).log10();
            acc += (la - lb) * (la - lb);
        }
        total += (acc / bins as f64).sqrt();
    }
    Ok(total / frames as f64)
}

/// Mean absolute difference of magnitude spectrograms.
pub fn stft_distance(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (a, b) = paired_spectra(reference, estimate, cfg)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfEntry {
    pub nfe: usize,
    pub wall_clock_s: f64,
    pub audio_s: f64,
    pub rtf: f64,
}

/// Median wall-clock over `repeats` timed runs after one untimed warm-up,
/// divided by the audio duration.
pub fn rtf_measure(mut runner: impl FnMut() -> Result<()>, audio_s: f64, repeats: usize, nfe: usize) -> Result<RtfEntry> {
    if repeats == 0 || audio_s <= 0.0 {
        return invalid("rtf needs at least one repeat and a positive duration");
    }
    runner()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        runner()?;
        times.push(t0.elapsed().as_secs_f64().max(1e-9));
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let wall = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
    Ok(RtfEntry { nfe, wall_clock_s: wall, audio_s, rtf: wall / audio_s })
}

/// A full-band evaluation clip.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub category: String,
    pub audio: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub item_id: String,
    pub category: String,
    pub cutoff_hz: f64,
    pub lsd: f64,
    pub stft_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `None` for the aggregate over every row.
    pub cutoff_hz: Option<f64>,
    pub count: usize,
    pub lsd: f64,
    pub stft_d: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
    pub rtf: Vec<RtfEntry>,
}

impl MetricReport {
    fn aggregate(rows: &[&MetricRow], cutoff_hz: Option<f64>) -> Aggregate {
        let n = rows.len().max(1) as f64;
        Aggregate {
            cutoff_hz,
            count: rows.len(),
            lsd: rows.iter().map(|r| r.lsd).sum::<f64>() / n,
            stft_d: rows.iter().map(|r| r.stft_d).sum::<f64>() / n,
        }
    }

    pub fn from_rows(rows: Vec<MetricRow>, cutoffs: &[f64]) -> Self {
        let mut aggregates: Vec<Aggregate> = cutoffs
            .iter()
            .map(|&c| Self::aggregate(&rows.iter().filter(|r| r.cutoff_hz == c).collect::<Vec<_>>(), Some(c)))
            .collect();
        aggregates.push(Self::aggregate(&rows.iter().collect::<Vec<_>>(), None));
        Self { rows, aggregates, rtf: Vec::new() }
    }

    pub fn overall(&self) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.cutoff_hz.is_none())
    }

    pub fn at_cutoff(&self, cutoff_hz: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.cutoff_hz == Some(cutoff_hz))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["item_id", "category", "cutoff_hz", "lsd", "stft_d"])?;
        for r in &self.rows {
            w.write_record([
                r.item_id.clone(),
                r.category.clone(),
                r.cutoff_hz.to_string(),
                r.lsd.to_string(),
                r.stft_d.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Cutoff triples used by the harness.
pub fn paper_cutoffs() -> Vec<f64> {
    vec![4000.0, 8000.0, 12000.0]
}

/// The paper triple scaled to 16 kHz audio.
pub fn desk_cutoffs() -> Vec<f64> {
    vec![1333.0, 2667.0, 4000.0]
}

/// Filter family and order for item `index`, drawn from `sim` with a
/// generator seeded by `(seed, index)`; the cutoff is fixed by the caller.
pub fn item_filter(sim: &LowpassSimConfig, seed: u64, index: usize, cutoff_hz: f64) -> Result<FilterSpec> {
    if sim.families.is_empty() {
        return invalid("filter family set is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let family = sim.families[rng.random_range(0..sim.families.len())];
    let order = rng.random_range(sim.order_range[0]..=sim.order_range[1]);
    Ok(FilterSpec { family, order, cutoff_hz })
}

/// Degrades every item at every cutoff, runs `model(lr, cutoff)` and scores
/// the output against the full-band clip. Rows are item-major.
pub fn eval_suite(
    mut model: impl FnMut(&Waveform, f64) -> Result<Waveform>,
    items: &[EvalItem],
    cutoffs: &[f64],
    sim: &LowpassSimConfig,
    metric: &MetricConfig,
    seed: u64,
) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(items.len() * cutoffs.len());
    for (i, item) in items.iter().enumerate() {
        for &cutoff in cutoffs {
            let spec = item_filter(sim, seed, i, cutoff)?;
            let lr = degrade(&item.audio, &spec, sim.rate_round_trip)?;
            let out = model(&lr, cutoff)?;
            rows.push(MetricRow {
                item_id: item.id.clone(),
                category: item.category.clone(),
                cutoff_hz: cutoff,
                lsd: lsd(&item.audio, &out, metric)?,
                stft_d: stft_distance(&item.audio, &out, metric)?,
            });
        }
    }
    Ok(MetricReport::from_rows(rows, cutoffs))
}
