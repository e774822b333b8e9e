//! Synthetic short-axis stacks with exact ground truth.
//!
//! Each cardiac slice draws an LV blood-pool disk, a myocardial ring and an RV
//! crescent. Regional morphology follows the usual short-axis picture: basal
//! rings are broken by an outflow-tract gap filled with blood-pool signal and
//! the RV is enlarged; apical slices have a small cavity, a thin ring, blurred
//! borders and (past the first apical slice) no RV. Masks are exact indicator
//! sets, so Dice oracles are exact.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    CmrStack, DatasetIndex, Grid, IndexRecord, LabelCode, LabelMask, Phase, RegionLabel,
    SliceImage,
};
use crate::io::{self, IoError, SplitFractions};
use crate::stratify::{regions_from_masks, split_counts};

/// Radial scale applied to ES geometry relative to ED.
pub const ES_SCALE: f64 = 0.7;
/// Relative per-stack jitter of geometry parameters in [`generate_dataset`].
pub const GEOMETRY_JITTER: f64 = 0.2;
/// Direction of the basal ring gap (radians, image coordinates).
const GAP_DIRECTION: f64 = -PI / 3.0;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub n_slices: usize,
    pub n_noncardiac_each_end: usize,
    pub image_size: usize,
    pub lv_radius_base_px: f64,
    pub lv_radius_apex_px: f64,
    pub myo_thickness_px: f64,
    pub rv_crescent: bool,
    pub basal_ring_gap_deg: f64,
    pub intensity_bloodpool: f64,
    pub intensity_myo: f64,
    pub intensity_bg: f64,
    pub noise_sd: f64,
    /// LV centre offset from the image centre, (row, col) pixels.
    pub center_offset_px: [f64; 2],
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            n_slices: 12,
            n_noncardiac_each_end: 2,
            image_size: 64,
            lv_radius_base_px: 14.0,
            lv_radius_apex_px: 5.0,
            myo_thickness_px: 4.0,
            rv_crescent: true,
            basal_ring_gap_deg: 70.0,
            intensity_bloodpool: 0.9,
            intensity_myo: 0.35,
            intensity_bg: 0.1,
            noise_sd: 0.05,
            center_offset_px: [0.0, 0.0],
            seed: 0,
        }
    }
}

impl PhantomParams {
    /// Defaults with the geometry scaled to an `n × n` image.
    pub fn for_image_size(n: usize) -> Self {
        let d = Self::default();
        let f = n as f64 / d.image_size as f64;
        Self {
            image_size: n,
            lv_radius_base_px: d.lv_radius_base_px * f,
            lv_radius_apex_px: d.lv_radius_apex_px * f,
            myo_thickness_px: d.myo_thickness_px * f,
            ..d
        }
    }

    pub fn cardiac_slices(&self) -> usize {
        self.n_slices.saturating_sub(2 * self.n_noncardiac_each_end)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidParams(m));
        if self.cardiac_slices() < 1 {
            return bad(format!(
                "{} slices leave no cardiac slices after {} non-cardiac at each end",
                self.n_slices, self.n_noncardiac_each_end
            ));
        }
        if self.image_size < crate::domain::MIN_SLICE_DIM {
            return bad(format!("image_size {} is too small", self.image_size));
        }
        if !(self.lv_radius_apex_px >= 1.0 && self.lv_radius_base_px > self.lv_radius_apex_px) {
            return bad("radii must decrease from base to apex and stay >= 1 px".into());
        }
        if !(self.myo_thickness_px > 0.0) {
            return bad("myo_thickness_px must be positive".into());
        }
        if !(0.0..180.0).contains(&self.basal_ring_gap_deg) {
            return bad(format!("basal_ring_gap_deg {} outside [0, 180)", self.basal_ring_gap_deg));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and >= 0".into());
        }
        for v in [self.intensity_bloodpool, self.intensity_myo, self.intensity_bg] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensity {v} outside [0, 1]"));
            }
        }
        let half = self.image_size as f64 / 2.0;
        let reach = self.lv_radius_base_px + self.myo_thickness_px;
        if self.center_offset_px.iter().any(|o| o.abs() + reach >= half) {
            return bad("left ventricle does not fit in the image".into());
        }
        Ok(())
    }
}

struct SliceGeometry {
    region: RegionLabel,
    lv_radius: f64,
    thickness: f64,
    ring_gap: bool,
    /// RV radius relative to the LV epicardial radius; `None` for no RV.
    rv_scale: Option<f64>,
    blur: bool,
}

fn slice_geometry(p: &PhantomParams, phase: Phase, rank: usize) -> SliceGeometry {
    let s = p.cardiac_slices();
    let counts = split_counts(s).expect("validated");
    let region = if rank < counts.base {
        RegionLabel::Base
    } else if rank < counts.base + counts.middle {
        RegionLabel::Middle
    } else {
        RegionLabel::Apex
    };
    let t = if s == 1 { 0.5 } else { rank as f64 / (s - 1) as f64 };
    let scale = match phase {
        Phase::Ed => 1.0,
        Phase::Es => ES_SCALE,
    };
    let lv_radius =
        ((p.lv_radius_base_px + (p.lv_radius_apex_px - p.lv_radius_base_px) * t) * scale).max(1.0);
    let first_apical = rank == counts.base + counts.middle;
    let (thickness, rv_scale) = match region {
        RegionLabel::Base => (p.myo_thickness_px, Some(1.3)),
        RegionLabel::Middle => (p.myo_thickness_px, Some(1.0)),
        _ => ((p.myo_thickness_px * 0.5).max(1.0), first_apical.then_some(0.8)),
    };
    SliceGeometry {
        region,
        lv_radius,
        thickness,
        ring_gap: region == RegionLabel::Base && p.basal_ring_gap_deg > 0.0,
        rv_scale: if p.rv_crescent { rv_scale } else { None },
        blur: region == RegionLabel::Apex,
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Draws one cardiac slice: (intensity without noise, labels).
fn draw_cardiac(p: &PhantomParams, g: &SliceGeometry) -> (Grid<f32>, Grid<u8>) {
    let n = p.image_size;
    let centre = (n as f64 - 1.0) / 2.0;
    let (cy, cx) = (centre + p.center_offset_px[0], centre + p.center_offset_px[1]);
    let epi = g.lv_radius + g.thickness;
    let half_gap = p.basal_ring_gap_deg.to_radians() / 2.0;
    let rv = g.rv_scale.map(|k| (cx - 0.9 * epi, epi * k));

    let mut img = Grid::filled(n, n, p.intensity_bg as f32);
    let mut lab = Grid::filled(n, n, 0u8);
    for row in 0..n {
        for col in 0..n {
            let dy = row as f64 - cy;
            let dx = col as f64 - cx;
            let d = dy.hypot(dx);
            let (code, intensity) = if d <= g.lv_radius {
                (LabelCode::Lvbp, p.intensity_bloodpool)
            } else if d <= epi {
                if g.ring_gap && angular_distance(dy.atan2(dx), GAP_DIRECTION) <= half_gap {
                    (LabelCode::Background, p.intensity_bloodpool)
                } else {
                    (LabelCode::Lvm, p.intensity_myo)
                }
            } else if rv.is_some_and(|(rx, rr)| (row as f64 - cy).hypot(col as f64 - rx) <= rr) {
                (LabelCode::Rvbp, p.intensity_bloodpool)
            } else {
                (LabelCode::Background, p.intensity_bg)
            };
            lab.set(row, col, code.code());
            img.set(row, col, intensity as f32);
        }
    }
    if g.blur {
        img = box_blur3(&img);
    }
    (img, lab)
}

fn box_blur3(img: &Grid<f32>) -> Grid<f32> {
    let (h, w) = img.shape();
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f32;
            let mut k = 0.0f32;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    acc += *img.get(rr, cc);
                    k += 1.0;
                }
            }
            out.set(r, c, acc / k);
        }
    }
    out
}

fn phase_stream(phase: Phase) -> u64 {
    match phase {
        Phase::Ed => 0,
        Phase::Es => 1,
    }
}

/// Generates one phase of a phantom stack; deterministic in (params, phase).
pub fn generate_stack(
    params: &PhantomParams,
    stack_id: &str,
    phase: Phase,
) -> Result<CmrStack, PhantomError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(phase_stream(phase));
    let noise = Normal::new(0.0, params.noise_sd).expect("validated sd");

    let n = params.image_size;
    let lo = params.n_noncardiac_each_end;
    let hi = lo + params.cardiac_slices();
    let mut slices = Vec::with_capacity(params.n_slices);
    let mut masks = Vec::with_capacity(params.n_slices);
    let mut intended = Vec::with_capacity(params.n_slices);
    for i in 0..params.n_slices {
        let (mut img, lab, region) = if (lo..hi).contains(&i) {
            let g = slice_geometry(params, phase, i - lo);
            let (img, lab) = draw_cardiac(params, &g);
            (img, lab, g.region)
        } else {
            (
                Grid::filled(n, n, params.intensity_bg as f32),
                Grid::filled(n, n, 0u8),
                RegionLabel::NonCardiac,
            )
        };
        if params.noise_sd > 0.0 {
            for v in img.as_mut_slice() {
                *v += noise.sample(&mut rng) as f32;
            }
        }
        slices.push(SliceImage {
            pixels: img,
            spacing_mm: [1.0, 1.0],
            stack_id: stack_id.to_string(),
            slice_index: i,
            phase,
        });
        masks.push(LabelMask { labels: lab });
        intended.push(region);
    }
    let regions = regions_from_masks(&masks);
    debug_assert_eq!(regions, intended, "geometry and stratification disagree");
    Ok(CmrStack {
        stack_id: stack_id.to_string(),
        phase,
        slices,
        gt_masks: Some(masks),
        gt_regions: Some(regions),
    })
}

/// Stack id of the `i`-th phantom in a dataset.
pub fn phantom_id(i: usize) -> String {
    format!("phantom_{i:04}")
}

/// Per-stack parameters: the template with geometry jittered by up to
/// ±[`GEOMETRY_JITTER`], seeded by `seed + i`.
pub fn jittered_params(template: &PhantomParams, seed: u64, i: usize) -> PhantomParams {
    let stack_seed = seed.wrapping_add(i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stack_seed);
    let mut jitter = |v: f64| v * rng.random_range(1.0 - GEOMETRY_JITTER..=1.0 + GEOMETRY_JITTER);
    let mut p = template.clone();
    p.lv_radius_base_px = jitter(template.lv_radius_base_px);
    p.lv_radius_apex_px = jitter(template.lv_radius_apex_px);
    p.myo_thickness_px = jitter(template.myo_thickness_px);
    p.basal_ring_gap_deg = jitter(template.basal_ring_gap_deg).min(179.0);
    let max_shift = GEOMETRY_JITTER * 0.1 * template.image_size as f64;
    let offset = [
        rng.random_range(-max_shift..=max_shift),
        rng.random_range(-max_shift..=max_shift),
    ];
    p.center_offset_px = [
        template.center_offset_px[0] + offset[0],
        template.center_offset_px[1] + offset[1],
    ];
    if p.lv_radius_apex_px >= p.lv_radius_base_px {
        p.lv_radius_apex_px = p.lv_radius_base_px * 0.5;
    }
    p.seed = stack_seed;
    p
}

/// Writes `n_stacks` phantoms (ED and ES) under `out_dir` in the dataset
/// layout, splits them 70/15/15 at stack level and writes `index.json`.
pub fn generate_dataset(
    n_stacks: usize,
    template: &PhantomParams,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetIndex, PhantomError> {
    template.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let per_stack: Vec<Vec<(Phase, Vec<RegionLabel>)>> = (0..n_stacks)
        .into_par_iter()
        .map(|i| {
            let params = jittered_params(template, seed, i);
            let id = phantom_id(i);
            Phase::ALL
                .iter()
                .map(|&phase| {
                    let stack = generate_stack(&params, &id, phase)?;
                    io::save_stack(&stack, &io::phase_dir(out_dir, &id, phase))?;
                    Ok((phase, stack.gt_regions.unwrap()))
                })
                .collect::<Result<Vec<_>, PhantomError>>()
        })
        .collect::<Result<_, _>>()?;

    let ids: Vec<String> = (0..n_stacks).map(phantom_id).collect();
    let splits = io::split_stacks(&ids, seed, SplitFractions::DEFAULT)?;
    let mut records = Vec::new();
    for ((id, split), phases) in splits.into_iter().zip(per_stack) {
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
    let index = DatasetIndex {
        records,
        source_dir: out_dir.to_path_buf(),
    };
    io::save_index(&index, out_dir)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_stack, Split};
    use std::collections::VecDeque;
    use RegionLabel::*;

    fn params(seed: u64) -> PhantomParams {
        PhantomParams { seed, ..Default::default() }
    }

    /// Whether a 4-connected walk over non-LVM pixels from the image border
    /// reaches an LVBP pixel.
    fn lvbp_reachable_from_outside(mask: &LabelMask) -> bool {
        let (h, w) = mask.shape();
        let lvm = LabelCode::Lvm.code();
        let mut seen = vec![false; h * w];
        let mut queue = VecDeque::new();
        for r in 0..h {
            for c in 0..w {
                if (r == 0 || c == 0 || r == h - 1 || c == w - 1) && *mask.labels.get(r, c) != lvm {
                    seen[r * w + c] = true;
                    queue.push_back((r, c));
                }
            }
        }
        while let Some((r, c)) = queue.pop_front() {
            if *mask.labels.get(r, c) == LabelCode::Lvbp.code() {
                return true;
            }
            let nbrs = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
            for (rr, cc) in nbrs {
                if rr < h && cc < w && !seen[rr * w + cc] && *mask.labels.get(rr, cc) != lvm {
                    seen[rr * w + cc] = true;
                    queue.push_back((rr, cc));
                }
            }
        }
        false
    }

    #[test]
    fn default_stack_regions() {
        let stack = generate_stack(&params(7), "p", Phase::Ed).unwrap();
        assert_eq!(stack.len(), 12);
        assert_eq!(
            stack.gt_regions.as_deref().unwrap(),
            &[NonCardiac, NonCardiac, Base, Base, Middle, Middle, Middle, Middle, Middle, Apex, NonCardiac, NonCardiac]
        );
        assert!(validate_stack(&stack).is_empty());
        let regions = crate::stratify::assign_regions(&stack).unwrap();
        assert_eq!(Some(regions), stack.gt_regions);
    }

    #[test]
    fn deterministic_without_and_with_noise() {
        let quiet = PhantomParams { noise_sd: 0.0, ..params(3) };
        assert_eq!(
            generate_stack(&quiet, "p", Phase::Es).unwrap(),
            generate_stack(&quiet, "p", Phase::Es).unwrap()
        );
        assert_eq!(
            generate_stack(&params(3), "p", Phase::Ed).unwrap(),
            generate_stack(&params(3), "p", Phase::Ed).unwrap()
        );
        assert_ne!(
            generate_stack(&params(3), "p", Phase::Ed).unwrap().slices[0].pixels,
            generate_stack(&params(4), "p", Phase::Ed).unwrap().slices[0].pixels
        );
    }

    #[test]
    fn closed_basal_ring_without_gap() {
        let p = PhantomParams { basal_ring_gap_deg: 0.0, ..params(1) };
        let stack = generate_stack(&p, "p", Phase::Ed).unwrap();
        let masks = stack.gt_masks.unwrap();
        assert_eq!(stack.gt_regions.as_ref().unwrap()[2], Base);
        assert!(!lvbp_reachable_from_outside(&masks[2]));
        // with the default gap the basal ring is open
        let open = generate_stack(&params(1), "p", Phase::Ed).unwrap().gt_masks.unwrap();
        assert!(lvbp_reachable_from_outside(&open[2]));
    }

    #[test]
    fn middle_lvbp_is_enclosed_and_codes_valid() {
        for seed in 0..5 {
            let p = jittered_params(&PhantomParams::default(), 11, seed);
            for phase in Phase::ALL {
                let stack = generate_stack(&p, "p", phase).unwrap();
                assert!(validate_stack(&stack).is_empty());
                let regions = stack.gt_regions.as_ref().unwrap();
                for (m, r) in stack.gt_masks.as_ref().unwrap().iter().zip(regions) {
                    if *r == Middle {
                        assert!(m.count(LabelCode::Lvbp) > 0);
                        assert!(!lvbp_reachable_from_outside(m));
                    }
                }
            }
        }
    }

    #[test]
    fn regional_morphology() {
        let stack = generate_stack(&params(2), "p", Phase::Ed).unwrap();
        let masks = stack.gt_masks.unwrap();
        let rv = |i: usize| masks[i].count(LabelCode::Rvbp);
        let lv = |i: usize| masks[i].count(LabelCode::Lvbp);
        assert!(rv(2) > rv(5), "basal RV enlarged");
        assert!(rv(9) > 0, "first apical slice keeps an RV");
        assert!(lv(9) < lv(5));
        assert!(masks[0].is_empty() && masks[11].is_empty());
        let es = generate_stack(&params(2), "p", Phase::Es).unwrap().gt_masks.unwrap();
        assert!(es[5].count(LabelCode::Lvbp) < lv(5));
    }

    #[test]
    fn imbalance_favours_noncardiac_and_middle() {
        let stack = generate_stack(&params(0), "p", Phase::Ed).unwrap();
        let regions = stack.gt_regions.unwrap();
        let common = regions.iter().filter(|r| matches!(r, NonCardiac | Middle)).count();
        assert!(common * 2 > regions.len());
    }

    #[test]
    fn invalid_params_rejected() {
        let cases = [
            PhantomParams { basal_ring_gap_deg: 180.0, ..params(0) },
            PhantomParams { noise_sd: -0.1, ..params(0) },
            PhantomParams { lv_radius_apex_px: 20.0, ..params(0) },
            PhantomParams { intensity_myo: 1.5, ..params(0) },
            PhantomParams { n_slices: 4, ..params(0) },
        ];
        for p in cases {
            assert!(matches!(generate_stack(&p, "p", Phase::Ed), Err(PhantomError::InvalidParams(_))));
        }
    }

    #[test]
    fn dataset_of_twenty() {
        let dir = tempfile::tempdir().unwrap();
        let index = generate_dataset(20, &PhantomParams::default(), 1, dir.path()).unwrap();
        let stack_dirs = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
        assert_eq!(stack_dirs, 20);
        let per_split = |s| index.stack_phases(s).len();
        assert_eq!(per_split(Split::Train) + per_split(Split::Val) + per_split(Split::Test), 40);
        assert_eq!((per_split(Split::Train), per_split(Split::Val), per_split(Split::Test)), (28, 6, 6));
        assert!(index.validate().is_empty());
        let rebuilt = io::build_index(dir.path(), 1, SplitFractions::DEFAULT).unwrap();
        assert_eq!(rebuilt, index);
    }

    #[test]
    fn dataset_is_byte_identical_and_empty_case() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(3, &PhantomParams::default(), 5, a.path()).unwrap();
        generate_dataset(3, &PhantomParams::default(), 5, b.path()).unwrap();
        for id in 0..3 {
            for phase in Phase::ALL {
                for f in [io::MANIFEST_FILE, io::IMAGES_FILE, io::MASKS_FILE] {
                    let pa = io::phase_dir(a.path(), &phantom_id(id), phase).join(f);
                    let pb = io::phase_dir(b.path(), &phantom_id(id), phase).join(f);
                    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
                }
            }
        }
        assert_eq!(
            std::fs::read(a.path().join(io::INDEX_FILE)).unwrap(),
            std::fs::read(b.path().join(io::INDEX_FILE)).unwrap()
        );

        let empty = tempfile::tempdir().unwrap();
        let index = generate_dataset(0, &PhantomParams::default(), 5, empty.path()).unwrap();
        assert!(index.records.is_empty());
        assert!(std::fs::read_dir(empty.path()).unwrap().all(|e| !e.unwrap().path().is_dir()));
    }
}
