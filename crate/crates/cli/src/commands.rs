use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Device;
use flashsr_core::codec::Codec;
use flashsr_core::denoiser::Denoiser;
use flashsr_core::distill::DistillLog;
use flashsr_core::dsp::{read_wav, resample_sinc, simulate_lr, write_wav, WavEncoding, Waveform};
use flashsr_core::eval::{eval_suite, rtf_measure};
use flashsr_core::nn::Checkpoint;
use flashsr_core::pipeline::{
    distill_stage, item_rng, latent_pairs, prepare_pairs, train_codec_stage, train_teacher_stage, train_vocoder_stage,
    FlashSr, Sampling,
};
use flashsr_core::rng::SeededRng;
use flashsr_core::vocoder::Generator;

use crate::config::RunConfig;
use crate::data::{load_items, load_training_items};
use crate::error::{CliError, CliResult};
use crate::manifest::{artifact_stem, Artifact, Manifest};

pub const TEACHER_KIND: &str = "teacher";
pub const STUDENT_KIND: &str = "student";

pub fn parse_device(s: &str) -> CliResult<Device> {
    match s {
        "cpu" => Ok(Device::Cpu),
        other => {
            let ordinal = match other.strip_prefix("cuda") {
                Some("") => 0,
                Some(rest) => rest
                    .strip_prefix(':')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| CliError::Usage(format!("bad device `{other}`")))?,
                None => return Err(CliError::Usage(format!("unknown device `{other}` (cpu, cuda, cuda:N)"))),
            };
            Device::new_cuda(ordinal).map_err(|e| CliError::Usage(format!("device `{other}` unavailable: {e}")))
        }
    }
}

/// Resolved settings shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub device: Device,
    pub steps: Option<usize>,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig, steps: Option<usize>) -> CliResult<Self> {
        let device = parse_device(&cfg.device)?;
        std::fs::create_dir_all(&cfg.out_dir)?;
        let hash = cfg.hash8()?;
        Ok(Self { cfg, device, steps, hash })
    }

    fn stem(&self, command: &str, step: usize) -> String {
        artifact_stem(command, step, &self.hash)
    }

    fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.cfg.out_dir.join(format!("{stem}.{ext}"))
    }

    fn manifest(
        &self,
        command: &str,
        step: usize,
        inputs: &[&Path],
        outputs: &[&Path],
        extra: serde_json::Value,
    ) -> CliResult<PathBuf> {
        let m = Manifest {
            command: command.into(),
            step,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            profile: format!("{:?}", self.cfg.profile).to_lowercase(),
            inputs: inputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            outputs: outputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            extra,
        };
        let path = self.path(&self.stem(command, step), "json");
        m.write(&path)?;
        let cfg_path = self.path(&self.stem(command, step), "toml");
        std::fs::write(cfg_path, self.cfg.to_toml_string()?)?;
        Ok(path)
    }

    fn checkpoint(&self, path: &Path) -> CliResult<Checkpoint> {
        if !path.is_file() {
            return Err(CliError::MissingCheckpoint(path.to_path_buf()));
        }
        Ok(Checkpoint::load(path, &self.device)?)
    }
}

fn log_writer(path: &Path, header: &[&str]) -> CliResult<csv::Writer<std::fs::File>> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))?;
    w.write_record(header).map_err(|e| CliError::Io(e.into()))?;
    Ok(w)
}

fn log_row(w: &mut csv::Writer<std::fs::File>, row: &[String]) -> flashsr_core::Result<()> {
    w.write_record(row)?;
    w.flush()?;
    Ok(())
}

pub fn simulate_lr_cmd(ctx: &Ctx, in_dir: &str) -> CliResult<PathBuf> {
    let items = load_items(in_dir, &ctx.cfg)?;
    let stem = ctx.stem("simulate-lr", 0);
    let dir = ctx.cfg.out_dir.join(&stem);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut filters = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let (lr, spec) = simulate_lr(&it.audio, &ctx.cfg.pipeline.simulation, &mut item_rng(ctx.cfg.seed, i))?;
        let path = dir.join(format!("{}.wav", it.id));
        write_wav(&path, &lr, WavEncoding::Float32)?;
        filters.push(serde_json::json!({ "id": it.id, "category": it.category, "filter": spec }));
        files.push(path);
    }
    let outs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    ctx.manifest("simulate-lr", 0, &[], &outs, serde_json::json!({ "items": filters }))
}

pub fn train_codec_cmd(ctx: &Ctx, data: &str) -> CliResult<PathBuf> {
    let mut cfg = ctx.cfg.pipeline.clone();
    if let Some(s) = ctx.steps {
        cfg.codec_train.epochs = s;
    }
    let epochs = cfg.codec_train.epochs;
    let pairs = prepare_pairs(&load_training_items(data, &ctx.cfg)?, &cfg, ctx.cfg.seed)?;
    let stem = ctx.stem("train-codec", epochs);
    let log_path = ctx.path(&stem, "csv");
    let mut log = log_writer(&log_path, &["epoch", "loss", "kl", "wall_clock"])?;
    let t0 = Instant::now();
    let mut epoch_rows = Vec::new();
    let (codec, report) = train_codec_stage(&pairs, &cfg, ctx.cfg.seed, &ctx.device, |e, _| {
        epoch_rows.push((e, t0.elapsed().as_secs_f64()));
        Ok(())
    })?;
    for ((e, wall), (loss, kl)) in epoch_rows.iter().zip(report.epoch_loss.iter().zip(&report.epoch_kl)) {
        log_row(&mut log, &[e.to_string(), loss.to_string(), kl.to_string(), format!("{wall:.3}")])?;
    }
    let ck = ctx.path(&stem, "ckpt");
    codec.to_checkpoint()?.save(&ck)?;
    ctx.manifest("train-codec", epochs, &[], &[&ck, &log_path], serde_json::json!({ "stats": codec.stats }))?;
    Ok(ck)
}

pub fn train_teacher_cmd(ctx: &Ctx, data: &str, codec_path: &Path) -> CliResult<PathBuf> {
    let codec = Codec::from_checkpoint(&ctx.checkpoint(codec_path)?, &ctx.device)?;
    let mut cfg = ctx.cfg.pipeline.clone();
    if let Some(s) = ctx.steps {
        cfg.teacher_train.steps = s;
    }
    let steps = cfg.teacher_train.steps;
    let pairs = prepare_pairs(&load_training_items(data, &ctx.cfg)?, &cfg, ctx.cfg.seed)?;
    let latents = latent_pairs(&codec, &pairs)?;
    let stem = ctx.stem("train-teacher", steps);
    let log_path = ctx.path(&stem, "csv");
    let mut log = log_writer(&log_path, &["step", "loss", "wall_clock"])?;
    let t0 = Instant::now();
    let (teacher, _) = train_teacher_stage(&latents, &cfg, ctx.cfg.seed, &ctx.device, |s, l, _| {
        log_row(&mut log, &[s.to_string(), l.to_string(), format!("{:.3}", t0.elapsed().as_secs_f64())])
    })?;
    let ck = ctx.path(&stem, "ckpt");
    teacher.to_checkpoint(TEACHER_KIND)?.save(&ck)?;
    ctx.manifest("train-teacher", steps, &[codec_path], &[&ck, &log_path], serde_json::Value::Null)?;
    Ok(ck)
}

pub fn distill_cmd(ctx: &Ctx, data: &str, codec_path: &Path, teacher_path: &Path) -> CliResult<PathBuf> {
    let codec = Codec::from_checkpoint(&ctx.checkpoint(codec_path)?, &ctx.device)?;
    let teacher = Denoiser::from_checkpoint(&ctx.checkpoint(teacher_path)?.expect_kind(TEACHER_KIND)?, &ctx.device)?;
    let cfg = &ctx.cfg.pipeline;
    let steps = ctx.steps.unwrap_or(cfg.distill.steps);
    let pairs = prepare_pairs(&load_training_items(data, &ctx.cfg)?, cfg, ctx.cfg.seed)?;
    let latents = latent_pairs(&codec, &pairs)?;
    let stem = ctx.stem("distill", steps);
    let log_path = ctx.path(&stem, "csv");
    let mut log = DistillLog::create(&log_path)?;
    let (student, _) = distill_stage(&teacher, &latents, cfg, steps, ctx.cfg.seed, |r, _| log.append(r))?;
    let ck = ctx.path(&stem, "ckpt");
    student.to_checkpoint(STUDENT_KIND)?.save(&ck)?;
    ctx.manifest("distill", steps, &[codec_path, teacher_path], &[&ck, &log_path], serde_json::Value::Null)?;
    Ok(ck)
}

pub fn train_vocoder_cmd(ctx: &Ctx, data: &str) -> CliResult<PathBuf> {
    let mut cfg = ctx.cfg.pipeline.clone();
    if let Some(s) = ctx.steps {
        cfg.vocoder_train.steps = s;
    }
    let steps = cfg.vocoder_train.steps;
    let pairs = prepare_pairs(&load_training_items(data, &ctx.cfg)?, &cfg, ctx.cfg.seed)?;
    let stem = ctx.stem("train-vocoder", steps);
    let log_path = ctx.path(&stem, "csv");
    let mut log = log_writer(&log_path, &["step", "msmel", "wall_clock"])?;
    let t0 = Instant::now();
    let (vocoder, _) = train_vocoder_stage(&pairs, &cfg, ctx.cfg.seed, &ctx.device, |s, m, _| {
        log_row(&mut log, &[s.to_string(), m.to_string(), format!("{:.3}", t0.elapsed().as_secs_f64())])
    })?;
    let ck = ctx.path(&stem, "ckpt");
    vocoder.to_checkpoint()?.save(&ck)?;
    ctx.manifest("train-vocoder", steps, &[], &[&ck, &log_path], serde_json::Value::Null)?;
    Ok(ck)
}

/// Checkpoint paths for the assembled model. The generator may be a
/// distilled student (one step) or a teacher (multi-step solver).
pub struct ModelPaths<'a> {
    pub codec: &'a Path,
    pub generator: &'a Path,
    pub vocoder: &'a Path,
}

pub fn load_model(ctx: &Ctx, paths: &ModelPaths) -> CliResult<FlashSr> {
    let codec_ck = ctx.checkpoint(paths.codec)?;
    let gen_ck = ctx.checkpoint(paths.generator)?;
    let voc_ck = ctx.checkpoint(paths.vocoder)?;
    let codec = Codec::from_checkpoint(&codec_ck, &ctx.device)?;
    let sampling = match gen_ck.kind.as_str() {
        STUDENT_KIND => Sampling::OneStep,
        TEACHER_KIND => Sampling::Solver(ctx.cfg.pipeline.teacher_sampler),
        other => return Err(CliError::Usage(format!("{} holds a `{other}` checkpoint", paths.generator.display()))),
    };
    let generator = Denoiser::from_checkpoint(&gen_ck, &ctx.device)?.merged()?;
    let vocoder = Generator::from_checkpoint(&voc_ck, &ctx.device)?;
    Ok(FlashSr::new(codec.mel.clone(), codec, generator, vocoder, sampling))
}

pub fn infer_cmd(ctx: &Ctx, input: &Path, paths: &ModelPaths, output: Option<&Path>) -> CliResult<PathBuf> {
    let model = load_model(ctx, paths)?;
    let w = read_wav(input)?;
    let rate = model.mel.sample_rate;
    let w: Waveform = if w.sample_rate() == rate { w } else { resample_sinc(&w, rate)? };
    let out = model.infer(&w, &mut SeededRng::new(ctx.cfg.seed))?;
    let stem = ctx.stem("infer", 0);
    let out_path = output.map(Path::to_path_buf).unwrap_or_else(|| ctx.path(&stem, "wav"));
    write_wav(&out_path, &out, WavEncoding::Float32)?;
    ctx.manifest(
        "infer",
        0,
        &[input, paths.codec, paths.generator, paths.vocoder],
        &[&out_path],
        serde_json::json!({ "nfe": model.sampling.nfe() }),
    )?;
    Ok(out_path)
}

pub fn evaluate_cmd(
    ctx: &Ctx,
    data: &str,
    model_name: &str,
    paths: Option<&ModelPaths>,
    rtf_repeats: usize,
) -> CliResult<PathBuf> {
    let items = load_items(data, &ctx.cfg)?;
    let cfg = &ctx.cfg.pipeline;
    let seed = ctx.cfg.seed;
    let (report, inputs) = match model_name {
        "identity" => (eval_suite(|lr, _| Ok(lr.clone()), &items, &cfg.cutoffs, &cfg.simulation, &cfg.metric, seed)?, vec![]),
        "flashsr" => {
            let paths = paths.ok_or_else(|| CliError::Usage("flashsr model needs --codec, --generator and --vocoder".into()))?;
            let model = load_model(ctx, paths)?;
            let mut rng = SeededRng::new(seed);
            let mut report =
                eval_suite(|lr, _| model.infer(lr, &mut rng), &items, &cfg.cutoffs, &cfg.simulation, &cfg.metric, seed)?;
            if rtf_repeats > 0 {
                let clip = &items[0].audio;
                let mut rng = SeededRng::new(seed);
                let entry = rtf_measure(
                    || model.infer(clip, &mut rng).map(|_| ()),
                    clip.duration_secs(),
                    rtf_repeats,
                    model.sampling.nfe(),
                )?;
                report.rtf.push(entry);
            }
            (report, vec![paths.codec, paths.generator, paths.vocoder])
        }
        other => return Err(CliError::Usage(format!("unknown model `{other}` (identity or flashsr)"))),
    };
    let stem = ctx.stem("evaluate", 0);
    let csv_path = ctx.path(&stem, "csv");
    let json_path = ctx.path(&format!("{stem}-report"), "json");
    report.write_csv(&csv_path)?;
    report.write_json(&json_path)?;
    ctx.manifest("evaluate", 0, &inputs, &[&csv_path, &json_path], serde_json::json!({ "model": model_name }))?;
    Ok(csv_path)
}
