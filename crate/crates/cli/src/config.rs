//! Run configuration: a named preset, overlaid by a JSON config file, then by
//! `--set key=value` overrides.

use std::path::{Path, PathBuf};

use cascade_core::cascade::TrainConfig;
use cascade_core::encoders::EncoderConfig;
use cascade_core::highres::HighResConfig;
use cascade_core::lowres::LowResConfig;
use cascade_metrics::EvaluateConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {message}")]
    Parse { path: String, message: String },
    #[error("override `{0}` must look like key=value")]
    BadOverride(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config field `{0}` is required for this command")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 2000 steps at batch 256.
    Desk,
    /// 30000 steps at batch 4096.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub real_train: Option<PathBuf>,
    pub real_test: Option<PathBuf>,
    pub synth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnarConfig {
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub evaluate: EvaluateConfig,
    /// Grid size of the 2-D histograms emitted for pairs of numerical columns.
    pub density_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub wd_times: Vec<f64>,
    pub wd_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub precision: Precision,
    pub paths: Paths,
    pub split: SplitConfig,
    pub encoder: EncoderConfig,
    pub lowres: LowResConfig,
    pub highres: HighResConfig,
    pub training: TrainConfig,
    pub sampling: SamplingConfig,
    pub mnar: MnarConfig,
    pub metrics: MetricsConfig,
    pub transport: TransportConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (steps, batch) = match preset {
            Preset::Desk => (2000, 256),
            Preset::Full => (30000, 4096),
        };
        Self {
            preset,
            precision: Precision::F64,
            paths: Paths::default(),
            split: SplitConfig { seed: 0 },
            encoder: EncoderConfig::default(),
            lowres: LowResConfig::default(),
            highres: HighResConfig::default(),
            training: TrainConfig {
                steps,
                batch,
                ..TrainConfig::default()
            },
            sampling: SamplingConfig {
                n: 1000,
                steps: 200,
                seed: 0,
            },
            mnar: MnarConfig { p: 0.10, seed: 0 },
            metrics: MetricsConfig {
                seed: 0,
                evaluate: EvaluateConfig::default(),
                density_bins: 20,
            },
            transport: TransportConfig {
                n_mc: 100_000,
                seed: 0,
                wd_times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                wd_samples: 10_000,
            },
        }
    }

    /// Builds the effective config. The preset is read from the overlay (file,
    /// then overrides) before anything else, so `--set preset=full` changes
    /// every preset-dependent default.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut overlay = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            // bare words that are not JSON are taken as strings
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut overlay, key.trim(), value)?;
        }
        let preset = match overlay.get("preset") {
            Some(p) => serde_json::from_value(p.clone())
                .map_err(|e| ConfigError::Invalid(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        let mut base = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        merge(&mut base, &overlay, "")?;
        serde_json::from_value(base).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn require<'a>(
        field: &'static str,
        value: &'a Option<PathBuf>,
    ) -> Result<&'a Path, ConfigError> {
        value.as_deref().ok_or(ConfigError::Missing(field))
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::BadOverride(key.to_string()));
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Deep merge of `overlay` into `base`; keys absent from `base` are rejected
/// so typos surface instead of being ignored.
fn merge(base: &mut Value, overlay: &Value, prefix: &str) -> Result<(), ConfigError> {
    let Value::Object(over) = overlay else {
        *base = overlay.clone();
        return Ok(());
    };
    let Value::Object(dst) = base else {
        return Err(ConfigError::UnknownKey(prefix.to_string()));
    };
    for (k, v) in over {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match dst.get_mut(k) {
            Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
            Some(slot) => *slot = v.clone(),
            None => return Err(ConfigError::UnknownKey(path)),
        }
    }
    Ok(())
}
