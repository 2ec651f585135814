//! On-disk model bundle: one directory, a `manifest.json` with versions and
//! SHA-256 hashes, and one file per component.

use std::collections::BTreeMap;
use std::path::Path;

use cascade_core::cascade::Cascade;
use cascade_core::data::{Dataset, FeatureSchema, Preprocessor};
use cascade_core::encoders::EncoderSet;
use cascade_core::highres::{HighResModel, HighResSpec};
use cascade_core::lowres::{LowResModel, LowResSpec};
use cascade_core::nn::ParamManifest;
use cascade_core::{Cascade32, Cascade64, Scalar};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Precision, RunConfig};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle file {file} is malformed: {message}")]
    Malformed { file: String, message: String },
    #[error("unsupported bundle format version {0}")]
    Version(u32),
    #[error("bundle file {0} does not match its manifest hash")]
    HashMismatch(String),
    #[error(
        "high-resolution model was trained against encoder set {expected}, bundle holds {found}"
    )]
    EncoderHashMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub cascade_version: String,
    pub precision: Precision,
    pub encoder_hash: String,
    /// SHA-256 of the echoed run config.
    pub config_hash: String,
    /// File name to SHA-256, hex encoded.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetFile<S> {
    spec: S,
    params: ParamManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    F32(Cascade32),
    F64(Cascade64),
}

impl Model {
    pub fn precision(&self) -> Precision {
        match self {
            Self::F32(_) => Precision::F32,
            Self::F64(_) => Precision::F64,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            Self::F32(m) => &m.schema,
            Self::F64(m) => &m.schema,
        }
    }

    pub fn encoders(&self) -> &EncoderSet {
        match self {
            Self::F32(m) => &m.encoders,
            Self::F64(m) => &m.encoders,
        }
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        match self {
            Self::F32(m) => &m.preprocessor,
            Self::F64(m) => &m.preprocessor,
        }
    }

    pub fn sample(&self, n: usize, steps: usize, seed: u64) -> Dataset {
        match self {
            Self::F32(m) => m.sample(n, steps, seed),
            Self::F64(m) => m.sample(n, steps, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: Model,
    /// Config of the fit that produced the model.
    pub config: RunConfig,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("bundle component serializes")
}

fn parse<T: for<'de> Deserialize<'de>>(file: &str, bytes: &[u8]) -> Result<T, BundleError> {
    serde_json::from_slice(bytes).map_err(|e| BundleError::Malformed {
        file: file.into(),
        message: e.to_string(),
    })
}

fn components<T: Scalar>(m: &Cascade<T>, config: &RunConfig) -> Vec<(&'static str, Vec<u8>)> {
    let (low_manifest, low_bytes) = m.lowres.export_params();
    let (high_manifest, high_bytes) = m.highres.export_params();
    vec![
        ("config.json", json(config)),
        ("schema.json", json(&m.schema)),
        ("preprocessor.json", json(&m.preprocessor)),
        ("encoders.json", json(&m.encoders)),
        (
            "lowres.json",
            json(&NetFile {
                spec: m.lowres.spec().clone(),
                params: low_manifest,
            }),
        ),
        ("lowres.bin", low_bytes),
        (
            "highres.json",
            json(&NetFile {
                spec: m.highres.spec().clone(),
                params: high_manifest,
            }),
        ),
        ("highres.bin", high_bytes),
    ]
}

impl ModelBundle {
    /// Writes every component, then the manifest. Output bytes depend only on
    /// the model and config, so refits with the same seed give identical
    /// bundles.
    pub fn save(&self, dir: &Path) -> Result<(), BundleError> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = match &self.model {
            Model::F32(m) => components(m, &self.config),
            Model::F64(m) => components(m, &self.config),
        };
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
            hashes.insert(name.to_string(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            format_version: BUNDLE_FORMAT_VERSION,
            cascade_version: env!("CARGO_PKG_VERSION").into(),
            precision: self.model.precision(),
            encoder_hash: self.model.encoders().hash(),
            config_hash: hashes["config.json"].clone(),
            files: hashes,
        };
        let path = dir.join(MANIFEST);
        std::fs::write(&path, json(&manifest)).map_err(io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST);
        let manifest: Manifest = parse(MANIFEST, &std::fs::read(&path).map_err(io(&path))?)?;
        if manifest.format_version != BUNDLE_FORMAT_VERSION {
            return Err(BundleError::Version(manifest.format_version));
        }
        let read = |name: &str| -> Result<Vec<u8>, BundleError> {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(io(&path))?;
            match manifest.files.get(name) {
                Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
                _ => Err(BundleError::HashMismatch(name.into())),
            }
        };
        let config: RunConfig = parse("config.json", &read("config.json")?)?;
        let schema: FeatureSchema = parse("schema.json", &read("schema.json")?)?;
        let preprocessor: Preprocessor = parse("preprocessor.json", &read("preprocessor.json")?)?;
        let encoders: EncoderSet = parse("encoders.json", &read("encoders.json")?)?;
        let low: NetFile<LowResSpec> = parse("lowres.json", &read("lowres.json")?)?;
        let high: NetFile<HighResSpec> = parse("highres.json", &read("highres.json")?)?;
        let found = encoders.hash();
        if high.spec.encoder_hash != found || manifest.encoder_hash != found {
            return Err(BundleError::EncoderHashMismatch {
                expected: high.spec.encoder_hash,
                found,
            });
        }
        let (low_bytes, high_bytes) = (read("lowres.bin")?, read("highres.bin")?);
        fn build<T: Scalar>(
            schema: FeatureSchema,
            preprocessor: Preprocessor,
            encoders: EncoderSet,
            low: NetFile<LowResSpec>,
            low_bytes: &[u8],
            high: NetFile<HighResSpec>,
            high_bytes: &[u8],
        ) -> Result<Cascade<T>, BundleError> {
            let bad = |file: &'static str| {
                move |e: cascade_core::nn::NnError| BundleError::Malformed {
                    file: file.into(),
                    message: e.to_string(),
                }
            };
            Ok(Cascade {
                schema,
                preprocessor,
                encoders,
                lowres: LowResModel::from_params(low.spec, &low.params, low_bytes)
                    .map_err(bad("lowres.bin"))?,
                highres: HighResModel::from_params(high.spec, &high.params, high_bytes)
                    .map_err(bad("highres.bin"))?,
            })
        }
        let model = match manifest.precision {
            Precision::F32 => Model::F32(build(
                schema,
                preprocessor,
                encoders,
                low,
                &low_bytes,
                high,
                &high_bytes,
            )?),
            Precision::F64 => Model::F64(build(
                schema,
                preprocessor,
                encoders,
                low,
                &low_bytes,
                high,
                &high_bytes,
            )?),
        };
        Ok(Self { model, config })
    }
}
