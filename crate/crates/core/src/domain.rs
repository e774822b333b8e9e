//! Domain types shared by every stage of the pipeline.
//!
//! A [`CmrStack`] is one cardiac phase of one short-axis acquisition, ordered
//! base-first. Masks use the canonical label codes in [`LabelCode`]; external
//! codes are remapped on import.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Minimum accepted slice height and width, in pixels.
pub const MIN_SLICE_DIM: usize = 8;

/// Row-major 2-D array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps `data` as a `height x width` grid; `None` if the length disagrees.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == height * width).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }
}

/// Cardiac phase of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "ES")]
    Es,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Ed, Phase::Es];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ed => "ED",
            Phase::Es => "ES",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ED" | "ed" => Ok(Phase::Ed),
            "ES" | "es" => Ok(Phase::Es),
            other => Err(format!("unknown phase `{other}` (expected ED or ES)")),
        }
    }
}

/// Canonical per-pixel label codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum LabelCode {
    Background = 0,
    #[serde(rename = "LVBP")]
    Lvbp = 1,
    #[serde(rename = "LVM")]
    Lvm = 2,
    #[serde(rename = "RVBP")]
    Rvbp = 3,
}

impl LabelCode {
    /// The three evaluated structures, in reporting order.
    pub const FOREGROUND: [LabelCode; 3] = [LabelCode::Lvbp, LabelCode::Lvm, LabelCode::Rvbp];
    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LabelCode::Background),
            1 => Some(LabelCode::Lvbp),
            2 => Some(LabelCode::Lvm),
            3 => Some(LabelCode::Rvbp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelCode::Background => "background",
            LabelCode::Lvbp => "LVBP",
            LabelCode::Lvm => "LVM",
            LabelCode::Rvbp => "RVBP",
        }
    }
}

impl fmt::Display for LabelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cardiac region of a slice. The declaration order doubles as the fixed
/// class order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    NonCardiac,
    Base,
    Middle,
    Apex,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 4] = [
        RegionLabel::NonCardiac,
        RegionLabel::Base,
        RegionLabel::Middle,
        RegionLabel::Apex,
    ];
    pub const CARDIAC: [RegionLabel; 3] = [RegionLabel::Base, RegionLabel::Middle, RegionLabel::Apex];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_cardiac(self) -> bool {
        self != RegionLabel::NonCardiac
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::NonCardiac => "NonCardiac",
            RegionLabel::Base => "Base",
            RegionLabel::Middle => "Middle",
            RegionLabel::Apex => "Apex",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One short-axis slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub pixels: Grid<f32>,
    /// (row, col) pixel spacing in millimetres.
    pub spacing_mm: [f64; 2],
    pub stack_id: String,
    /// 0 is the most basal acquired slice.
    pub slice_index: usize,
    pub phase: Phase,
}

/// Per-pixel canonical label codes for one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub labels: Grid<u8>,
}

impl LabelMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            labels: Grid::filled(height, width, 0),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.labels.shape()
    }

    /// True when every pixel is background.
    pub fn is_empty(&self) -> bool {
        self.labels.as_slice().iter().all(|&c| c == 0)
    }

    pub fn count(&self, label: LabelCode) -> usize {
        let code = label.code();
        self.labels.as_slice().iter().filter(|&&c| c == code).count()
    }
}

/// One phase of a short-axis acquisition, base-first.
#[derive(Debug, Clone, PartialEq)]
pub struct CmrStack {
    pub stack_id: String,
    pub phase: Phase,
    pub slices: Vec<SliceImage>,
    pub gt_masks: Option<Vec<LabelMask>>,
    pub gt_regions: Option<Vec<RegionLabel>>,
}

impl CmrStack {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// `<stack_id>_<phase>`, the key used for per-phase directories.
    pub fn key(&self) -> String {
        stack_key(&self.stack_id, self.phase)
    }
}

pub fn stack_key(stack_id: &str, phase: Phase) -> String {
    format!("{stack_id}_{phase}")
}

/// A single invariant violation reported by [`validate_stack`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    SliceTooSmall { slice: usize, height: usize, width: usize },
    NonFinitePixel { slice: usize },
    NonPositiveSpacing { slice: usize },
    SliceIndexOutOfOrder { position: usize, found: usize },
    ForeignSlice { slice: usize },
    MaskCountMismatch { slices: usize, masks: usize },
    MaskShapeMismatch { slice: usize },
    InvalidLabelCode { slice: usize, code: u8 },
    RegionCountMismatch { slices: usize, regions: usize },
    NonContiguousRegions { slice: usize, region: RegionLabel, after: RegionLabel },
    InteriorNonCardiac { slice: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SliceTooSmall { slice, height, width } => write!(
                f,
                "slice {slice}: {height}x{width} is below the {MIN_SLICE_DIM}x{MIN_SLICE_DIM} minimum"
            ),
            Violation::NonFinitePixel { slice } => write!(f, "slice {slice}: non-finite pixel value"),
            Violation::NonPositiveSpacing { slice } => {
                write!(f, "slice {slice}: pixel spacing must be positive")
            }
            Violation::SliceIndexOutOfOrder { position, found } => write!(
                f,
                "slice at position {position} carries slice_index {found}"
            ),
            Violation::ForeignSlice { slice } => {
                write!(f, "slice {slice}: stack id or phase differs from the stack")
            }
            Violation::MaskCountMismatch { slices, masks } => {
                write!(f, "{masks} masks for {slices} slices")
            }
            Violation::MaskShapeMismatch { slice } => {
                write!(f, "slice {slice}: mask shape differs from image shape")
            }
            Violation::InvalidLabelCode { slice, code } => {
                write!(f, "slice {slice}: invalid label code {code}")
            }
            Violation::RegionCountMismatch { slices, regions } => {
                write!(f, "{regions} region labels for {slices} slices")
            }
            Violation::NonContiguousRegions { slice, region, after } => write!(
                f,
                "slice {slice}: non-contiguous regions ({region} follows {after})"
            ),
            Violation::InteriorNonCardiac { slice } => write!(
                f,
                "slice {slice}: NonCardiac inside the cardiac range on a slice with a non-empty or missing mask"
            ),
        }
    }
}

/// Returns every invariant violation of `stack`; empty iff the stack is valid.
///
/// NonCardiac slices strictly inside the cardiac range are accepted only when
/// their mask exists and is all background (an annotation gap).
pub fn validate_stack(stack: &CmrStack) -> Vec<Violation> {
    let mut out = Vec::new();
    for (pos, s) in stack.slices.iter().enumerate() {
        let (h, w) = s.pixels.shape();
        if h < MIN_SLICE_DIM || w < MIN_SLICE_DIM {
            out.push(Violation::SliceTooSmall { slice: pos, height: h, width: w });
        }
        if s.pixels.as_slice().iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinitePixel { slice: pos });
        }
        if !(s.spacing_mm[0] > 0.0 && s.spacing_mm[1] > 0.0) {
            out.push(Violation::NonPositiveSpacing { slice: pos });
        }
        if s.slice_index != pos {
            out.push(Violation::SliceIndexOutOfOrder { position: pos, found: s.slice_index });
        }
        if s.stack_id != stack.stack_id || s.phase != stack.phase {
            out.push(Violation::ForeignSlice { slice: pos });
        }
    }

    let masks = stack.gt_masks.as_deref();
    if let Some(masks) = masks {
        if masks.len() != stack.slices.len() {
            out.push(Violation::MaskCountMismatch {
                slices: stack.slices.len(),
                masks: masks.len(),
            });
        }
        for (pos, (m, s)) in masks.iter().zip(&stack.slices).enumerate() {
            if m.shape() != s.pixels.shape() {
                out.push(Violation::MaskShapeMismatch { slice: pos });
            }
            if let Some(&bad) = m.labels.as_slice().iter().find(|&&c| c > 3) {
                out.push(Violation::InvalidLabelCode { slice: pos, code: bad });
            }
        }
    }

    if let Some(regions) = stack.gt_regions.as_deref() {
        if regions.len() != stack.slices.len() {
            out.push(Violation::RegionCountMismatch {
                slices: stack.slices.len(),
                regions: regions.len(),
            });
        }
        out.extend(region_order_violations(regions, masks));
    }
    out
}

fn region_order_violations(regions: &[RegionLabel], masks: Option<&[LabelMask]>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut last: Option<RegionLabel> = None;
    for (pos, &r) in regions.iter().enumerate() {
        if !r.is_cardiac() {
            continue;
        }
        if let Some(prev) = last {
            if r < prev {
                out.push(Violation::NonContiguousRegions { slice: pos, region: r, after: prev });
            }
        }
        last = Some(r);
    }

    let first = regions.iter().position(|r| r.is_cardiac());
    let end = regions.iter().rposition(|r| r.is_cardiac());
    if let (Some(first), Some(end)) = (first, end) {
        for pos in first..=end {
            if regions[pos].is_cardiac() {
                continue;
            }
            let gap_is_empty = masks
                .and_then(|m| m.get(pos))
                .map(LabelMask::is_empty)
                .unwrap_or(false);
            if !gap_is_empty {
                out.push(Violation::InteriorNonCardiac { slice: pos });
            }
        }
    }
    out
}

/// Dataset split a stack belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One slice entry of a [`DatasetIndex`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub stack_id: String,
    pub phase: Phase,
    pub slice_index: usize,
    pub region: RegionLabel,
    pub split: Split,
}

/// Slice-level index of a dataset directory. Splits are assigned per stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub records: Vec<IndexRecord>,
    pub source_dir: PathBuf,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &IndexRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Sub-index containing only records of `split`.
    pub fn restricted_to(&self, split: Split) -> DatasetIndex {
        DatasetIndex {
            records: self.split(split).cloned().collect(),
            source_dir: self.source_dir.clone(),
        }
    }

    /// Distinct stack ids in first-appearance order.
    pub fn stack_ids(&self) -> Vec<&str> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.stack_id.as_str()) {
                out.push(r.stack_id.as_str());
            }
        }
        out
    }

    /// Distinct (stack_id, phase) pairs of `split`, sorted.
    pub fn stack_phases(&self, split: Split) -> Vec<(String, Phase)> {
        let set: std::collections::BTreeSet<(String, Phase)> = self
            .split(split)
            .map(|r| (r.stack_id.clone(), r.phase))
            .collect();
        set.into_iter().collect()
    }

    /// Invariant problems: duplicate slice keys or stacks straddling splits.
    pub fn validate(&self) -> Vec<String> {
        use std::collections::{BTreeMap, BTreeSet};
        let mut problems = Vec::new();
        let mut keys = BTreeSet::new();
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if !keys.insert((r.stack_id.as_str(), r.phase, r.slice_index)) {
                problems.push(format!(
                    "duplicate record {}/{}/{}",
                    r.stack_id, r.phase, r.slice_index
                ));
            }
            match splits.get(r.stack_id.as_str()) {
                Some(&s) if s != r.split => problems.push(format!(
                    "stack {} appears in both {s} and {}",
                    r.stack_id, r.split
                )),
                Some(_) => {}
                None => {
                    splits.insert(&r.stack_id, r.split);
                }
            }
        }
        problems
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Stack of `n` 8x8 slices; masks paint a 2x2 LVBP square where `filled[i]`.
    pub fn small_stack(filled: &[bool]) -> CmrStack {
        let slices = (0..filled.len())
            .map(|i| SliceImage {
                pixels: Grid::filled(8, 8, 0.1),
                spacing_mm: [1.0, 1.0],
                stack_id: "s0".into(),
                slice_index: i,
                phase: Phase::Ed,
            })
            .collect();
        let masks = filled
            .iter()
            .map(|&f| {
                let mut m = LabelMask::empty(8, 8);
                if f {
                    for r in 3..5 {
                        for c in 3..5 {
                            m.labels.set(r, c, 1);
                        }
                    }
                }
                m
            })
            .collect();
        CmrStack {
            stack_id: "s0".into(),
            phase: Phase::Ed,
            slices,
            gt_masks: Some(masks),
            gt_regions: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::small_stack;
    use super::*;
    use RegionLabel::*;

    #[test]
    fn well_formed_stack_has_no_violations() {
        let mut stack = small_stack(&[false, true, true, true, true, true, true, true, true, false]);
        stack.gt_regions = Some(vec![
            NonCardiac, Base, Base, Middle, Middle, Middle, Middle, Middle, Apex, NonCardiac,
        ]);
        assert!(validate_stack(&stack).is_empty());
    }

    #[test]
    fn non_contiguous_regions_reported_once() {
        let mut stack = small_stack(&[true; 4]);
        stack.gt_regions = Some(vec![Base, Middle, Base, Apex]);
        let v = validate_stack(&stack);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::NonContiguousRegions { slice: 2, .. }));
        assert!(v[0].to_string().contains("non-contiguous"));
    }

    #[test]
    fn invalid_code_names_the_code() {
        let mut stack = small_stack(&[true, true]);
        stack.gt_masks.as_mut().unwrap()[1].labels.set(0, 0, 4);
        let v = validate_stack(&stack);
        assert_eq!(v, vec![Violation::InvalidLabelCode { slice: 1, code: 4 }]);
        assert!(v[0].to_string().contains('4'));
    }

    #[test]
    fn interior_gap_allowed_only_when_mask_empty() {
        let mut stack = small_stack(&[true, false, true]);
        stack.gt_regions = Some(vec![Base, NonCardiac, Middle]);
        assert!(validate_stack(&stack).is_empty());

        stack.gt_masks = None;
        assert_eq!(
            validate_stack(&stack),
            vec![Violation::InteriorNonCardiac { slice: 1 }]
        );
    }

    #[test]
    fn geometry_and_ordering_violations() {
        let mut stack = small_stack(&[false, false]);
        stack.slices[0].pixels = Grid::filled(4, 8, 0.0);
        stack.slices[1].slice_index = 5;
        stack.slices[1].spacing_mm = [0.0, 1.0];
        stack.slices[1].pixels.set(0, 0, f32::NAN);
        let v = validate_stack(&stack);
        assert!(v.contains(&Violation::SliceTooSmall { slice: 0, height: 4, width: 8 }));
        assert!(v.contains(&Violation::MaskShapeMismatch { slice: 0 }));
        assert!(v.contains(&Violation::SliceIndexOutOfOrder { position: 1, found: 5 }));
        assert!(v.contains(&Violation::NonPositiveSpacing { slice: 1 }));
        assert!(v.contains(&Violation::NonFinitePixel { slice: 1 }));
    }

    #[test]
    fn validation_is_pure() {
        let mut stack = small_stack(&[true, true, true]);
        stack.gt_regions = Some(vec![Apex, Base, Middle]);
        assert_eq!(validate_stack(&stack), validate_stack(&stack));
    }

    #[test]
    fn index_detects_straddling_stacks() {
        let rec = |split, i| IndexRecord {
            stack_id: "a".into(),
            phase: Phase::Ed,
            slice_index: i,
            region: NonCardiac,
            split,
        };
        let idx = DatasetIndex {
            records: vec![rec(Split::Train, 0), rec(Split::Test, 1), rec(Split::Train, 1)],
            source_dir: PathBuf::new(),
        };
        assert_eq!(idx.validate().len(), 2);
    }
}
