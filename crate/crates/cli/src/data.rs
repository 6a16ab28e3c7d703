//! Dataset resolution for `--data`: either `synthetic` or a directory of
//! WAV files. Directory ingests are cached under `FLASHSR_CACHE` when set.

use std::path::{Path, PathBuf};

use flashsr_core::corpus::{load_wav_dir, synthetic_corpus};
use flashsr_core::dsp::{read_wav, write_wav, WavEncoding};
use flashsr_core::eval::EvalItem;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CACHE_ENV: &str = "FLASHSR_CACHE";

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    category: String,
    file: String,
}

fn cache_dir(root: &Path, data: &Path, rate: u32) -> CliResult<PathBuf> {
    let canon = data.canonicalize()?;
    let mut h = Sha256::new();
    h.update(canon.to_string_lossy().as_bytes());
    h.update(rate.to_le_bytes());
    Ok(root.join(&hex::encode(h.finalize())[..16]))
}

fn load_dir_cached(dir: &Path, rate: u32) -> CliResult<Vec<EvalItem>> {
    let Some(root) = std::env::var_os(CACHE_ENV).map(PathBuf::from) else {
        return Ok(load_wav_dir(dir, rate)?);
    };
    let slot = cache_dir(&root, dir, rate)?;
    let index = slot.join("index.json");
    if index.exists() {
        log::info!("dataset cache hit {}", slot.display());
        let entries: Vec<CacheEntry> = serde_json::from_str(&std::fs::read_to_string(&index)?)?;
        return entries
            .into_iter()
            .map(|e| Ok(EvalItem { audio: read_wav(slot.join(&e.file))?, id: e.id, category: e.category }))
            .collect();
    }
    let items = load_wav_dir(dir, rate)?;
    std::fs::create_dir_all(&slot)?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let file = format!("{i:05}.wav");
        write_wav(slot.join(&file), &it.audio, WavEncoding::Float32)?;
        entries.push(CacheEntry { id: it.id.clone(), category: it.category.clone(), file });
    }
    std::fs::write(&index, serde_json::to_string(&entries)?)?;
    Ok(items)
}

/// Items at the profile's sample rate.
pub fn load_items(spec: &str, cfg: &RunConfig) -> CliResult<Vec<EvalItem>> {
    let rate = cfg.pipeline.mel.sample_rate;
    if spec == "synthetic" {
        return Ok(synthetic_corpus(cfg.data.synthetic_clips, cfg.data.clip_samples, rate, cfg.seed)?);
    }
    let dir = Path::new(spec);
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("--data: `{spec}` is neither `synthetic` nor a directory")));
    }
    load_dir_cached(dir, rate)
}

/// Items with every clip fitted to `data.clip_samples`.
pub fn load_training_items(spec: &str, cfg: &RunConfig) -> CliResult<Vec<EvalItem>> {
    load_items(spec, cfg)?
        .into_iter()
        .map(|mut it| {
            it.audio = it.audio.fit_to_len(cfg.data.clip_samples)?;
            Ok(it)
        })
        .collect()
}
