use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::TensorSpec;
use super::{ModelConfig, ModelError, ModelKind, RegionScope, Result};
use crate::io::{io_err, read_json, write_atomic, write_json};
use crate::sampler::SamplerConfig;

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_PARAMS: &str = "params.f32";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean validation Dice (segmenter) or accuracy (classifier).
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_kind: ModelKind,
    pub region_scope: RegionScope,
    pub config: ModelConfig,
    /// Sampling configuration used for batch selection, if non-uniform.
    pub sampler: Option<SamplerConfig>,
    pub log: Vec<EpochLog>,
    pub tensors: Vec<TensorSpec>,
    pub params: Vec<f32>,
    pub content_hash: String,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    model_kind: ModelKind,
    region_scope: RegionScope,
    config: &'a ModelConfig,
    sampler: &'a Option<SamplerConfig>,
}

impl Checkpoint {
    pub(crate) fn new(
        region_scope: RegionScope,
        config: ModelConfig,
        sampler: Option<SamplerConfig>,
        log: Vec<EpochLog>,
        tensors: Vec<TensorSpec>,
        params: Vec<f32>,
    ) -> Self {
        let mut ck = Self {
            model_kind: config.kind(),
            region_scope,
            config,
            sampler,
            log,
            tensors,
            params,
            content_hash: String::new(),
        };
        ck.content_hash = ck.compute_hash();
        ck
    }

    /// SHA-256 of the little-endian parameter bytes followed by the JSON of
    /// the kind, scope and configuration.
    pub fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(params_bytes(&self.params));
        let cfg = HashedConfig {
            model_kind: self.model_kind,
            region_scope: self.region_scope,
            config: &self.config,
            sampler: &self.sampler,
        };
        h.update(serde_json::to_vec(&cfg).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn expect_kind(&self, expected: ModelKind) -> Result<()> {
        if self.model_kind != expected {
            return Err(ModelError::KindMismatch {
                expected,
                found: self.model_kind,
            });
        }
        Ok(())
    }
}

fn params_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_kind: ModelKind,
    region_scope: RegionScope,
    config: ModelConfig,
    sampler: Option<SamplerConfig>,
    n_params: usize,
    tensors: Vec<TensorEntry>,
    content_hash: String,
    log: Vec<EpochLog>,
}

/// Writes `params.f32` and then `manifest.json` into `dir`.
pub fn save_checkpoint(ck: &Checkpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join(CHECKPOINT_PARAMS), &params_bytes(&ck.params))?;
    let mut offset = 0;
    let tensors = ck
        .tensors
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        model_kind: ck.model_kind,
        region_scope: ck.region_scope,
        config: ck.config.clone(),
        sampler: ck.sampler.clone(),
        n_params: ck.params.len(),
        tensors,
        content_hash: ck.content_hash.clone(),
        log: ck.log.clone(),
    };
    write_json(&dir.join(CHECKPOINT_MANIFEST), &manifest)?;
    Ok(())
}

/// Loads a checkpoint directory and verifies its content hash.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let m: Manifest = read_json(&dir.join(CHECKPOINT_MANIFEST))?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::CorruptCheckpoint(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    let path = dir.join(CHECKPOINT_PARAMS);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    if bytes.len() != 4 * m.n_params {
        return Err(ModelError::CorruptCheckpoint(format!(
            "{} bytes of parameters, expected {}",
            bytes.len(),
            4 * m.n_params
        )));
    }
    let tensor_total: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if tensor_total != m.n_params {
        return Err(ModelError::CorruptCheckpoint("tensor table does not cover the parameters".into()));
    }
    let params = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if m.config.kind() != m.model_kind {
        return Err(ModelError::CorruptCheckpoint("config does not match model kind".into()));
    }
    let ck = Checkpoint {
        model_kind: m.model_kind,
        region_scope: m.region_scope,
        config: m.config,
        sampler: m.sampler,
        log: m.log,
        tensors: m
            .tensors
            .into_iter()
            .map(|t| TensorSpec {
                name: t.name,
                shape: t.shape,
            })
            .collect(),
        params,
        content_hash: m.content_hash,
    };
    let actual = ck.compute_hash();
    if actual != ck.content_hash {
        return Err(ModelError::HashMismatch {
            expected: ck.content_hash,
            actual,
        });
    }
    Ok(ck)
}
