//! Run configuration: a profile's defaults overlaid with a TOML file.
//!
//! The file may set any subset of keys; every key must exist in the
//! schema, and errors name the offending dotted path.

use std::path::{Path, PathBuf};

use flashsr_core::nn::config_hash8;
use flashsr_core::pipeline::{PipelineConfig, Profile};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Clips generated when `--data synthetic` is used.
    pub synthetic_clips: usize,
    /// Training clips are cropped or zero-padded to this many samples.
    pub clip_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub device: String,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
}

/// The parts of a run that determine its results; paths and device are
/// excluded so that relocating a run keeps its hash.
#[derive(Serialize)]
struct HashedParts<'a> {
    profile: Profile,
    seed: u64,
    data: &'a DataConfig,
    pipeline: &'a PipelineConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let pipeline = PipelineConfig::for_profile(profile);
        let clip_samples = pipeline.mel.sample_rate as usize;
        Self {
            profile,
            seed: 0,
            device: "cpu".into(),
            out_dir: PathBuf::from("runs"),
            data: DataConfig { synthetic_clips: 10, clip_samples },
            pipeline,
        }
    }

    /// Parses `text` over the defaults of `profile`, or of the file's own
    /// `profile` key when `profile` is `None`.
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> CliResult<Self> {
        let user: Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let file_profile = match user.get("profile") {
            None => None,
            Some(Value::String(s)) => Some(s.parse::<Profile>().map_err(|e| CliError::Config(format!("profile: {e}")))?),
            Some(_) => return Err(CliError::Config("profile: expected a string".into())),
        };
        let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut base = Value::try_from(Self::for_profile(profile)).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut base, user, "")?;
        if let Some(t) = base.as_table_mut() {
            t.insert("profile".into(), Value::try_from(profile).map_err(|e| CliError::Config(e.to_string()))?);
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, profile)
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn hash8(&self) -> CliResult<String> {
        let parts = HashedParts { profile: self.profile, seed: self.seed, data: &self.data, pipeline: &self.pipeline };
        Ok(config_hash8(&parts)?)
    }
}

fn merge(base: &mut Value, user: Value, path: &str) -> CliResult<()> {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            for (k, v) in u {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    None => return Err(CliError::Config(format!("unknown key `{key}`"))),
                    Some(slot) => merge(slot, v, &key)?,
                }
            }
            Ok(())
        }
        (Value::Table(_), _) => Err(CliError::Config(format!("`{path}` must be a table"))),
        (slot, v) => {
            let same_kind = std::mem::discriminant(slot) == std::mem::discriminant(&v)
                || matches!((&*slot, &v), (Value::Float(_), Value::Integer(_)));
            if !same_kind {
                return Err(CliError::Config(format!("`{path}`: expected {}, found {}", slot.type_str(), v.type_str())));
            }
            *slot = match (&*slot, v) {
                (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
                (_, v) => v,
            };
            Ok(())
        }
    }
}
