//! Dataset persistence.
//!
//! A stack directory holds `manifest.json`, `images.f32` (little-endian f32,
//! slice-major, row-major within a slice) and optionally `masks.u8` with the
//! same ordering. A dataset root holds one directory per stack id with one
//! sub-directory per phase, plus `index.json`.

mod import;
mod index;
pub mod nifti;
mod stack;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::domain::Violation;

pub use import::{import_volume, import_volume_with, LabelRemap, Orientation, VolumeSource};
pub use index::{
    build_index, load_index, save_index, split_stacks, stack_split_hash, SplitFractions,
    INDEX_FILE,
};
pub use stack::{
    load_masks, load_stack, phase_dir, save_masks, save_stack, StackManifest, FORMAT_VERSION,
    IMAGES_FILE, MANIFEST_FILE, MASKS_FILE,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O failure at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("corrupt data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("stack {key} violates invariants: {}", join_violations(.violations))]
    InvalidStack { key: String, violations: Vec<Violation> },
    #[error("unreadable source {path}: {reason}")]
    UnreadableSource { path: PathBuf, reason: String },
    #[error("label code {0} present in the source has no mapping")]
    RemapIncomplete(i64),
    #[error("invalid label remap: {0}")]
    InvalidRemap(String),
    #[error("no stack directories found under {0}")]
    EmptyDataset(PathBuf),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
