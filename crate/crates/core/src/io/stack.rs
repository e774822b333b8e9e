use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_json, write_atomic, write_json, IoError, Result};
use crate::domain::{
    validate_stack, CmrStack, Grid, LabelMask, Phase, RegionLabel, SliceImage,
};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.f32";
pub const MASKS_FILE: &str = "masks.u8";

/// `manifest.json` of a stack directory. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub stack_id: String,
    pub phase: Phase,
    pub n_slices: usize,
    pub height: usize,
    pub width: usize,
    pub spacing_mm: [f64; 2],
    pub has_masks: bool,
    pub region_labels: Option<Vec<RegionLabel>>,
    pub format_version: u32,
}

impl StackManifest {
    fn voxels(&self) -> usize {
        self.n_slices * self.height * self.width
    }
}

/// `<root>/<stack_id>/<phase>`: where a dataset keeps one phase of a stack.
pub fn phase_dir(root: &Path, stack_id: &str, phase: Phase) -> PathBuf {
    root.join(stack_id).join(phase.as_str())
}

fn manifest_for(stack: &CmrStack, dir: &Path, has_masks: bool) -> Result<StackManifest> {
    let (height, width) = stack.slices.first().map(|s| s.pixels.shape()).unwrap_or((0, 0));
    let spacing_mm = stack.slices.first().map(|s| s.spacing_mm).unwrap_or([1.0, 1.0]);
    for s in &stack.slices {
        if s.pixels.shape() != (height, width) || s.spacing_mm != spacing_mm {
            return Err(IoError::CorruptData {
                path: dir.to_path_buf(),
                reason: format!(
                    "slice {} differs in shape or spacing from slice 0",
                    s.slice_index
                ),
            });
        }
    }
    Ok(StackManifest {
        stack_id: stack.stack_id.clone(),
        phase: stack.phase,
        n_slices: stack.slices.len(),
        height,
        width,
        spacing_mm,
        has_masks,
        region_labels: stack.gt_regions.clone(),
        format_version: FORMAT_VERSION,
    })
}

fn mask_bytes<'a>(masks: impl IntoIterator<Item = &'a LabelMask>) -> Vec<u8> {
    masks
        .into_iter()
        .flat_map(|m| m.labels.as_slice().iter().copied())
        .collect()
}

/// Writes `stack` into `dir` (created if needed). The manifest is written last.
pub fn save_stack(stack: &CmrStack, dir: &Path) -> Result<StackManifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = manifest_for(stack, dir, stack.gt_masks.is_some())?;

    let mut images = Vec::with_capacity(manifest.voxels() * 4);
    for s in &stack.slices {
        for v in s.pixels.as_slice() {
            images.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join(IMAGES_FILE), &images)?;

    let masks_path = dir.join(MASKS_FILE);
    match &stack.gt_masks {
        Some(masks) => {
            if masks.iter().any(|m| m.shape() != (manifest.height, manifest.width)) {
                return Err(IoError::CorruptData {
                    path: dir.to_path_buf(),
                    reason: "mask shape differs from image shape".into(),
                });
            }
            write_atomic(&masks_path, &mask_bytes(masks))?;
        }
        None if masks_path.exists() => {
            std::fs::remove_file(&masks_path).map_err(io_err(&masks_path))?;
        }
        None => {}
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Writes a masks-only directory (no `images.f32`), as used by prediction stores.
pub fn save_masks(
    stack_id: &str,
    phase: Phase,
    masks: &[LabelMask],
    dir: &Path,
) -> Result<StackManifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (height, width) = masks.first().map(LabelMask::shape).unwrap_or((0, 0));
    if masks.iter().any(|m| m.shape() != (height, width)) {
        return Err(IoError::CorruptData {
            path: dir.to_path_buf(),
            reason: "masks differ in shape".into(),
        });
    }
    let manifest = StackManifest {
        stack_id: stack_id.to_string(),
        phase,
        n_slices: masks.len(),
        height,
        width,
        spacing_mm: [1.0, 1.0],
        has_masks: true,
        region_labels: None,
        format_version: FORMAT_VERSION,
    };
    write_atomic(&dir.join(MASKS_FILE), &mask_bytes(masks))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<StackManifest> {
    let path = dir.join(MANIFEST_FILE);
    // Check the version before the full schema so newer manifests report
    // UnsupportedVersion rather than a parse failure.
    let raw: serde_json::Value = read_json(&path)?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| IoError::CorruptData {
            path: path.clone(),
            reason: "missing format_version".into(),
        })?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(IoError::UnsupportedVersion(version as u32));
    }
    serde_json::from_value(raw).map_err(|source| IoError::Json { path, source })
}

fn read_exact_len(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected {
        return Err(IoError::CorruptData {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(bytes)
}

fn decode_masks(path: &Path, m: &StackManifest) -> Result<Vec<LabelMask>> {
    let bytes = read_exact_len(path, m.voxels())?;
    if let Some(bad) = bytes.iter().find(|&&c| c > 3) {
        return Err(IoError::CorruptData {
            path: path.to_path_buf(),
            reason: format!("invalid label code {bad}"),
        });
    }
    let plane = m.height * m.width;
    Ok((0..m.n_slices)
        .map(|i| LabelMask {
            labels: Grid::from_vec(m.height, m.width, bytes[i * plane..(i + 1) * plane].to_vec())
                .expect("plane length"),
        })
        .collect())
}

/// Reads a stack directory and validates the result.
pub fn load_stack(dir: &Path) -> Result<CmrStack> {
    let m = read_manifest(dir)?;
    let images_path = dir.join(IMAGES_FILE);
    let bytes = read_exact_len(&images_path, m.voxels() * 4)?;
    let plane = m.height * m.width;
    let slices = (0..m.n_slices)
        .map(|i| {
            let px = bytes[i * plane * 4..(i + 1) * plane * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            SliceImage {
                pixels: Grid::from_vec(m.height, m.width, px).expect("plane length"),
                spacing_mm: m.spacing_mm,
                stack_id: m.stack_id.clone(),
                slice_index: i,
                phase: m.phase,
            }
        })
        .collect();
    let gt_masks = if m.has_masks {
        Some(decode_masks(&dir.join(MASKS_FILE), &m)?)
    } else {
        None
    };
    let stack = CmrStack {
        stack_id: m.stack_id,
        phase: m.phase,
        slices,
        gt_masks,
        gt_regions: m.region_labels,
    };
    let violations = validate_stack(&stack);
    if !violations.is_empty() {
        return Err(IoError::InvalidStack {
            key: stack.key(),
            violations,
        });
    }
    Ok(stack)
}

/// Reads a masks-only directory written by [`save_masks`] (or the masks of a
/// full stack directory).
pub fn load_masks(dir: &Path) -> Result<(StackManifest, Vec<LabelMask>)> {
    let m = read_manifest(dir)?;
    if !m.has_masks {
        return Err(IoError::CorruptData {
            path: dir.to_path_buf(),
            reason: "manifest declares no masks".into(),
        });
    }
    let masks = decode_masks(&dir.join(MASKS_FILE), &m)?;
    Ok((m, masks))
}
