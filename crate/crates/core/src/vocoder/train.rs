//! Alternating least-squares GAN training of the generator against the
//! period and constant-Q discriminators.

use candle_core::{Device, Tensor};
use candle_nn::Optimizer;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::discriminators::{CqtDiscriminator, DiscOutput, MultiPeriodDiscriminator};
use super::losses::{discriminator_loss, feature_matching_loss, generator_adv_loss, msmel_loss, MelResolution, MultiScaleMel};
use super::{Generator, VocoderConfig};
use crate::dsp::{MelSpectrogram, Waveform};
use crate::error::{invalid, Error, Result};
use crate::nn::optim::{adam_gan, finite_scalar, random_batch};
use crate::rng::SeededRng;

/// Conditioning mel, band-limited input at the target rate, and the
/// full-band target.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub mel: MelSpectrogram,
    pub lr: Waveform,
    pub target: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Per-step multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub lambda_mel: f64,
    pub lambda_fm: f64,
    /// Generator-only steps before the adversarial terms switch on.
    pub adv_start_step: usize,
    pub resolutions: Vec<MelResolution>,
}

impl VocoderTrainConfig {
    pub fn paper() -> Self {
        Self {
            steps: 1_000_000,
            batch_size: 16,
            segment_frames: 32,
            lr_generator: 5e-5,
            lr_discriminator: 1e-4,
            lr_decay: 0.9999996,
            lambda_mel: 45.0,
            lambda_fm: 2.0,
            adv_start_step: 0,
            resolutions: vec![
                MelResolution { n_fft: 512, hop: 128, n_mels: 64 },
                MelResolution { n_fft: 1024, hop: 256, n_mels: 128 },
                MelResolution { n_fft: 2048, hop: 512, n_mels: 256 },
            ],
        }
    }

    pub fn desk() -> Self {
        Self {
            steps: 3000,
            batch_size: 4,
            segment_frames: 32,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            resolutions: MelResolution::desk_set(),
            ..Self::paper()
        }
    }

    /// Learning rate after `step` decays from `base`.
    pub fn lr_at(&self, base: f64, step: usize) -> f64 {
        base * self.lr_decay.powf(step as f64)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VocoderTrainReport {
    pub msmel: Vec<f64>,
    pub gen_adv: Vec<f64>,
    pub feature_matching: Vec<f64>,
    pub disc: Vec<f64>,
}

fn crop_batch(
    data: &[VocoderExample],
    idx: &[usize],
    seg: usize,
    hop: usize,
    rng: &mut SeededRng,
    device: &Device,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n_mels = data[0].mel.n_mels();
    let (mut mel, mut lr, mut tg) = (Vec::new(), Vec::new(), Vec::new());
    for &i in idx {
        let ex = &data[i];
        let frames = ex.mel.frames();
        let off = if frames > seg { rng.random_range(0..=frames - seg) } else { 0 };
        for k in 0..n_mels {
            for t in off..off + seg {
                mel.push(ex.mel.values[[k, t]]);
            }
        }
        lr.extend_from_slice(&ex.lr.samples()[off * hop..(off + seg) * hop]);
        tg.extend_from_slice(&ex.target.samples()[off * hop..(off + seg) * hop]);
    }
    let b = idx.len();
    Ok((
        Tensor::from_vec(mel, (b, n_mels, seg), device)?,
        Tensor::from_vec(lr, (b, 1, seg * hop), device)?,
        Tensor::from_vec(tg, (b, 1, seg * hop), device)?,
    ))
}

fn discriminate(mpd: &MultiPeriodDiscriminator, cqt: &CqtDiscriminator, x: &Tensor) -> Result<DiscOutput> {
    let mut out = mpd.forward(x)?;
    out.extend(cqt.forward(x)?);
    Ok(out)
}

/// Trains a fresh generator; `on_step` sees (step, msmel value, generator).
pub fn train_vocoder(
    data: &[VocoderExample],
    config: VocoderConfig,
    train: &VocoderTrainConfig,
    seed: u64,
    device: &Device,
    mut on_step: impl FnMut(usize, f64, &Generator) -> Result<()>,
) -> Result<(Generator, VocoderTrainReport)> {
    if data.is_empty() {
        return invalid("vocoder training needs a non-empty dataset");
    }
    let hop = config.hop();
    let seg = train.segment_frames;
    for ex in data {
        if ex.mel.frames() < seg || ex.lr.len() != ex.mel.frames() * hop || ex.target.len() != ex.lr.len() {
            return Err(Error::InvalidArgument(format!(
                "example with {} frames / {} samples does not fit segment {seg} at hop {hop}",
                ex.mel.frames(),
                ex.lr.len()
            )));
        }
    }
    let sample_rate = data[0].target.sample_rate();
    let gen = Generator::new(config.clone(), seed, device)?;
    let mpd = MultiPeriodDiscriminator::new(&config.mpd_periods, seed ^ 0x11, device)?;
    let cqt = CqtDiscriminator::new(config.cqt.clone(), seed ^ 0x22, device)?;
    let mel = MultiScaleMel::new(&train.resolutions, sample_rate, device)?;
    let mut opt_g = adam_gan(gen.store().vars(), train.lr_generator)?;
    let mut d_vars = mpd.store().vars();
    d_vars.extend(cqt.store().vars());
    let mut opt_d = adam_gan(d_vars, train.lr_discriminator)?;
    let mut rng = SeededRng::new(seed).fork(4);
    let mut report = VocoderTrainReport::default();

    for step in 0..train.steps {
        opt_g.set_learning_rate(train.lr_at(train.lr_generator, step));
        opt_d.set_learning_rate(train.lr_at(train.lr_discriminator, step));
        let idx = random_batch(data.len(), train.batch_size, &mut rng);
        let (m, lr, target) = crop_batch(data, &idx, seg, hop, &mut rng, device)?;
        let fake = gen.forward(&m, &lr)?;
        let l_mel = msmel_loss(&fake, &target, &mel)?;
        let mel_v = finite_scalar(&l_mel, step, "msmel")?;

        if step >= train.adv_start_step {
            let real_out = discriminate(&mpd, &cqt, &target)?;
            let fake_out = discriminate(&mpd, &cqt, &fake.detach())?;
            let l_d = discriminator_loss(&real_out, &fake_out)?;
            report.disc.push(finite_scalar(&l_d, step, "discriminator")?);
            opt_d.backward_step(&l_d)?;

            let real_out = discriminate(&mpd, &cqt, &target)?;
            let fake_out = discriminate(&mpd, &cqt, &fake)?;
            let l_adv = generator_adv_loss(&fake_out)?;
            let l_fm = feature_matching_loss(&real_out, &fake_out)?;
            report.gen_adv.push(finite_scalar(&l_adv, step, "generator adversarial")?);
            report.feature_matching.push(finite_scalar(&l_fm, step, "feature matching")?);
            let total = ((l_mel * train.lambda_mel)? + l_adv)?.add(&(l_fm * train.lambda_fm)?)?;
            opt_g.backward_step(&total)?;
        } else {
            opt_g.backward_step(&(l_mel * train.lambda_mel)?)?;
        }
        report.msmel.push(mel_v);
        on_step(step, mel_v, &gen)?;
    }
    Ok((gen, report))
}
