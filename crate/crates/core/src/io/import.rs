use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nifti::{self, Volume3};
use super::{save_stack, IoError, Result, StackManifest};
use crate::domain::{CmrStack, Grid, LabelMask, Phase, SliceImage};
use crate::stratify::regions_from_masks;

/// Slice order of a source volume along its third axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    BaseFirst,
    ApexFirst,
}

/// External label code to canonical code. Unmapped 0 stays background.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelRemap {
    pub mapping: BTreeMap<i64, u8>,
}

impl LabelRemap {
    /// Validates targets (0..=3) and injectivity among nonzero targets.
    pub fn new(mapping: BTreeMap<i64, u8>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (&src, &dst) in &mapping {
            if dst > 3 {
                return Err(IoError::InvalidRemap(format!("{src} -> {dst}: target outside 0..=3")));
            }
            if dst != 0 {
                if let Some(prev) = seen.insert(dst, src) {
                    return Err(IoError::InvalidRemap(format!(
                        "codes {prev} and {src} both map to {dst}"
                    )));
                }
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity() -> Self {
        Self::new((0..4).map(|c| (c, c as u8)).collect()).unwrap()
    }

    pub fn apply(&self, code: i64) -> Result<u8> {
        match self.mapping.get(&code) {
            Some(&c) => Ok(c),
            None if code == 0 => Ok(0),
            None => Err(IoError::RemapIncomplete(code)),
        }
    }

    /// Inverse over nonzero targets; `None` if a nonzero source maps to 0
    /// (information is lost) or a source code does not fit in 0..=3.
    pub fn inverse(&self) -> Option<Self> {
        let mut inv = BTreeMap::new();
        for (&src, &dst) in &self.mapping {
            if dst == 0 {
                if src != 0 {
                    return None;
                }
                continue;
            }
            let src = u8::try_from(src).ok().filter(|&s| s <= 3)?;
            inv.insert(i64::from(dst), src);
        }
        Self::new(inv).ok()
    }

    /// Remaps every pixel of a mask.
    pub fn remap_mask(&self, mask: &LabelMask) -> Result<LabelMask> {
        let (h, w) = mask.shape();
        let data = mask
            .labels
            .as_slice()
            .iter()
            .map(|&c| self.apply(i64::from(c)))
            .collect::<Result<Vec<u8>>>()?;
        Ok(LabelMask {
            labels: Grid::from_vec(h, w, data).unwrap(),
        })
    }
}

/// An image volume with an optional label volume of the same shape.
#[derive(Debug, Clone)]
pub struct VolumeSource {
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Imports a NIfTI-1 source. See [`import_volume_with`].
pub fn import_volume(
    source: &VolumeSource,
    remap: &LabelRemap,
    orientation: Orientation,
    stack_id: &str,
    phase: Phase,
    out_dir: &Path,
) -> Result<StackManifest> {
    import_volume_with(nifti::read, source, remap, orientation, stack_id, phase, out_dir)
}

/// Imports a volume through `reader`, reorders slices base-first, remaps
/// labels, assigns regions from the remapped masks and saves the stack.
pub fn import_volume_with<R>(
    reader: R,
    source: &VolumeSource,
    remap: &LabelRemap,
    orientation: Orientation,
    stack_id: &str,
    phase: Phase,
    out_dir: &Path,
) -> Result<StackManifest>
where
    R: Fn(&Path) -> std::result::Result<Volume3, String>,
{
    let unreadable = |path: &Path| {
        let path = path.to_path_buf();
        move |reason| IoError::UnreadableSource { path, reason }
    };
    let image = reader(&source.image).map_err(unreadable(&source.image))?;
    let labels = match &source.labels {
        Some(p) => {
            let v = reader(p).map_err(unreadable(p))?;
            if v.dims != image.dims {
                return Err(IoError::UnreadableSource {
                    path: p.clone(),
                    reason: format!("label dims {:?} differ from image dims {:?}", v.dims, image.dims),
                });
            }
            Some(v)
        }
        None => None,
    };

    let [nx, ny, nz] = image.dims;
    let order: Vec<usize> = match orientation {
        Orientation::BaseFirst => (0..nz).collect(),
        Orientation::ApexFirst => (0..nz).rev().collect(),
    };
    // rows follow y, columns follow x
    let spacing_mm = [image.pixdim[1], image.pixdim[0]];
    let plane = |v: &Volume3, z: usize| -> Vec<f64> {
        (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).map(|(x, y)| v.at(x, y, z)).collect()
    };

    let slices = order
        .iter()
        .enumerate()
        .map(|(i, &z)| SliceImage {
            pixels: Grid::from_vec(ny, nx, plane(&image, z).into_iter().map(|v| v as f32).collect())
                .unwrap(),
            spacing_mm,
            stack_id: stack_id.to_string(),
            slice_index: i,
            phase,
        })
        .collect();

    let gt_masks = match &labels {
        Some(lv) => {
            let mut masks = Vec::with_capacity(nz);
            for &z in &order {
                let codes = plane(lv, z)
                    .into_iter()
                    .map(|v| {
                        if v.fract() != 0.0 || !v.is_finite() {
                            return Err(IoError::UnreadableSource {
                                path: source.labels.clone().unwrap(),
                                reason: format!("non-integer label value {v}"),
                            });
                        }
                        remap.apply(v as i64)
                    })
                    .collect::<Result<Vec<u8>>>()?;
                masks.push(LabelMask {
                    labels: Grid::from_vec(ny, nx, codes).unwrap(),
                });
            }
            Some(masks)
        }
        None => None,
    };
    let gt_regions = gt_masks.as_deref().map(regions_from_masks);
    let stack = CmrStack {
        stack_id: stack_id.to_string(),
        phase,
        slices,
        gt_masks,
        gt_regions,
    };
    let violations = crate::domain::validate_stack(&stack);
    if !violations.is_empty() {
        return Err(IoError::InvalidStack {
            key: stack.key(),
            violations,
        });
    }
    save_stack(&stack, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_stack;
    use crate::io::nifti::{write, Datatype};

    fn remap(pairs: &[(i64, u8)]) -> LabelRemap {
        LabelRemap::new(pairs.iter().copied().collect()).unwrap()
    }

    fn write_source(dir: &Path, labels: &[f64]) -> VolumeSource {
        let dims = [8, 9, 4];
        let n = dims.iter().product::<usize>();
        let image = Volume3 {
            dims,
            pixdim: [1.5, 1.25, 10.0],
            data: (0..n).map(|i| (i as f64).sin()).collect(),
        };
        let lab = Volume3 {
            dims,
            pixdim: image.pixdim,
            data: (0..n).map(|i| labels[(i / 5) % labels.len()]).collect(),
        };
        let img_path = dir.join("img.nii.gz");
        let lab_path = dir.join("lab.nii");
        write(&img_path, &image, Datatype::F32).unwrap();
        write(&lab_path, &lab, Datatype::I16).unwrap();
        VolumeSource { image: img_path, labels: Some(lab_path) }
    }

    #[test]
    fn remap_then_inverse_is_identity() {
        let r = remap(&[(3, 1), (2, 2), (1, 3)]);
        let inv = r.inverse().unwrap();
        let mask = LabelMask {
            labels: Grid::from_vec(2, 4, vec![0, 1, 2, 3, 3, 2, 1, 0]).unwrap(),
        };
        let there = r.remap_mask(&mask).unwrap();
        assert_ne!(there, mask);
        assert_eq!(inv.remap_mask(&there).unwrap(), mask);
    }

    #[test]
    fn remap_validation() {
        assert!(LabelRemap::new([(1, 1), (2, 1)].into_iter().collect()).is_err());
        assert!(LabelRemap::new([(1, 7)].into_iter().collect()).is_err());
        // many-to-background is fine
        assert!(LabelRemap::new([(4, 0), (5, 0), (1, 1)].into_iter().collect()).is_ok());
    }

    #[test]
    fn unmapped_code_is_remap_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_source(dir.path(), &[0.0, 1.0, 5.0]);
        let err = import_volume(
            &src,
            &remap(&[(1, 1)]),
            Orientation::BaseFirst,
            "ext",
            Phase::Ed,
            &dir.path().join("out"),
        )
        .unwrap_err();
        assert!(matches!(err, IoError::RemapIncomplete(5)));
    }

    #[test]
    fn apex_first_is_reversed() {
        let dir = tempfile::tempdir().unwrap();
        let src = write_source(dir.path(), &[0.0, 1.0, 2.0, 3.0]);
        let r = LabelRemap::identity();
        import_volume(&src, &r, Orientation::BaseFirst, "a", Phase::Ed, &dir.path().join("b")).unwrap();
        import_volume(&src, &r, Orientation::ApexFirst, "a", Phase::Ed, &dir.path().join("r")).unwrap();
        let fwd = load_stack(&dir.path().join("b")).unwrap();
        let rev = load_stack(&dir.path().join("r")).unwrap();
        let n = fwd.len();
        assert_eq!(n, 4);
        for i in 0..n {
            assert_eq!(rev.slices[i].pixels, fwd.slices[n - 1 - i].pixels);
            assert_eq!(rev.gt_masks.as_ref().unwrap()[i], fwd.gt_masks.as_ref().unwrap()[n - 1 - i]);
        }
        assert_eq!(fwd.slices[0].spacing_mm, [1.25, 1.5]);
        assert_eq!(fwd.slices[0].pixels.shape(), (9, 8));
        // pixel (row=y, col=x) of slice z
        let expected = ((3 + 8 * (2 + 9 * 1)) as f64).sin() as f32;
        assert_eq!(*fwd.slices[1].pixels.get(2, 3), expected);
    }

    #[test]
    fn unreadable_source() {
        let dir = tempfile::tempdir().unwrap();
        let src = VolumeSource { image: dir.path().join("missing.nii"), labels: None };
        let err = import_volume(&src, &LabelRemap::identity(), Orientation::BaseFirst, "x", Phase::Es, dir.path())
            .unwrap_err();
        assert!(matches!(err, IoError::UnreadableSource { .. }));
    }
}
