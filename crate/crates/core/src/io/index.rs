use std::path::Path;

use super::stack::{load_masks, MANIFEST_FILE};
use super::{io_err, read_json, write_json, IoError, Result, StackManifest};
use crate::domain::{DatasetIndex, IndexRecord, Phase, RegionLabel, Split};
use crate::stratify::regions_from_masks;

pub const INDEX_FILE: &str = "index.json";

/// Stack-level split fractions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const DEFAULT: SplitFractions = SplitFractions {
        train: 0.7,
        val: 0.15,
        test: 0.15,
    };

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|f| f.is_finite() && *f >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(IoError::InvalidFractions(parts))
        }
    }

    /// Stack counts (train, val, test) for `n` stacks: val and test are
    /// floored, train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split-ordering key of a stack: FNV-1a over the id bytes, mixed with the
/// seed through SplitMix64.
pub fn stack_split_hash(stack_id: &str, split_seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stack_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(split_seed))
}

/// Assigns each stack id a split. Stacks are ordered by (hash, id); the first
/// block goes to test, the next to val, the rest to train. The result does not
/// depend on the order of `stack_ids`.
pub fn split_stacks(
    stack_ids: &[String],
    split_seed: u64,
    fractions: SplitFractions,
) -> Result<Vec<(String, Split)>> {
    fractions.validate()?;
    let mut keyed: Vec<(u64, &String)> = stack_ids
        .iter()
        .map(|id| (stack_split_hash(id, split_seed), id))
        .collect();
    keyed.sort();
    let (_, val, test) = fractions.counts(keyed.len());
    let mut out: Vec<(String, Split)> = keyed
        .into_iter()
        .enumerate()
        .map(|(rank, (_, id))| {
            let split = if rank < test {
                Split::Test
            } else if rank < test + val {
                Split::Val
            } else {
                Split::Train
            };
            (id.clone(), split)
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Indexes every `<root>/<stack_id>/<phase>/` directory. Region labels come
/// from the manifest when stored, otherwise from the masks.
pub fn build_index(root: &Path, split_seed: u64, fractions: SplitFractions) -> Result<DatasetIndex> {
    fractions.validate()?;
    let mut stacks: Vec<(String, Vec<(Phase, Vec<RegionLabel>)>)> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(io_err(root))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let mut phases = Vec::new();
        for phase in Phase::ALL {
            let pdir = dir.join(phase.as_str());
            if !pdir.join(MANIFEST_FILE).is_file() {
                continue;
            }
            let manifest: StackManifest = read_json(&pdir.join(MANIFEST_FILE))?;
            let regions = match manifest.region_labels {
                Some(r) => r,
                None if manifest.has_masks => regions_from_masks(&load_masks(&pdir)?.1),
                None => vec![RegionLabel::NonCardiac; manifest.n_slices],
            };
            phases.push((phase, regions));
        }
        if !phases.is_empty() {
            let id = dir.file_name().unwrap().to_string_lossy().into_owned();
            stacks.push((id, phases));
        }
    }
    if stacks.is_empty() {
        return Err(IoError::EmptyDataset(root.to_path_buf()));
    }
    let ids: Vec<String> = stacks.iter().map(|(id, _)| id.clone()).collect();
    let splits = split_stacks(&ids, split_seed, fractions)?;

    let mut records = Vec::new();
    for ((id, phases), (_, split)) in stacks.into_iter().zip(splits) {
        for (phase, regions) in phases {
            for (slice_index, region) in regions.into_iter().enumerate() {
                records.push(IndexRecord {
                    stack_id: id.clone(),
                    phase,
                    slice_index,
                    region,
                    split,
                });
            }
        }
    }
    Ok(DatasetIndex {
        records,
        source_dir: root.to_path_buf(),
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct IndexFile {
    records: Vec<IndexRecord>,
}

/// Writes `<root>/index.json`. The source directory is implied by the location.
pub fn save_index(index: &DatasetIndex, root: &Path) -> Result<()> {
    let file = IndexFile {
        records: index.records.clone(),
    };
    write_json(&root.join(INDEX_FILE), &file)
}

pub fn load_index(root: &Path) -> Result<DatasetIndex> {
    let file: IndexFile = read_json(&root.join(INDEX_FILE))?;
    Ok(DatasetIndex {
        records: file.records,
        source_dir: root.to_path_buf(),
    })
}
