//! Ground-truth region assignment: slices with any annotation are split
//! base/middle/apex in a 20/60/20 ratio, everything else is non-cardiac.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CmrStack, LabelMask, RegionLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StratifyError {
    #[error("stack {0} has no ground-truth masks")]
    MissingMasks(String),
    #[error("cardiac slice count must be at least 1, got {0}")]
    InvalidCount(usize),
}

/// Number of slices per cardiac region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub base: usize,
    pub middle: usize,
    pub apex: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.base + self.middle + self.apex
    }
}

/// Region quotas in fifths of the slice count: 1/5, 3/5, 1/5.
const FIFTHS: [usize; 3] = [1, 3, 1];

/// Largest-remainder apportionment of `s` slices over quotas (0.2s, 0.6s, 0.2s).
///
/// Remainders are compared exactly in units of 1/5. Leftover seats go to the
/// largest remainders, ties resolved Middle, then Base, then Apex.
pub fn split_counts(s: usize) -> Result<RegionCounts, StratifyError> {
    if s < 1 {
        return Err(StratifyError::InvalidCount(s));
    }
    // Index order: base, middle, apex.
    let mut seats = [0usize; 3];
    let mut rem = [0usize; 3];
    for k in 0..3 {
        seats[k] = FIFTHS[k] * s / 5;
        rem[k] = FIFTHS[k] * s % 5;
    }
    let leftover = s - seats.iter().sum::<usize>();
    const PRIORITY: [usize; 3] = [1, 0, 2];
    let mut order = PRIORITY;
    // Stable sort keeps the priority order among equal remainders.
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]));
    for &k in order.iter().take(leftover) {
        seats[k] += 1;
    }
    Ok(RegionCounts {
        base: seats[0],
        middle: seats[1],
        apex: seats[2],
    })
}

fn masks_of(stack: &CmrStack) -> Result<&[LabelMask], StratifyError> {
    stack
        .gt_masks
        .as_deref()
        .ok_or_else(|| StratifyError::MissingMasks(stack.key()))
}

/// First and last slice index whose mask contains any label; `None` if every
/// mask is empty.
pub fn cardiac_slice_range(stack: &CmrStack) -> Result<Option<(usize, usize)>, StratifyError> {
    let masks = masks_of(stack)?;
    let first = masks.iter().position(|m| !m.is_empty());
    let last = masks.iter().rposition(|m| !m.is_empty());
    Ok(first.zip(last))
}

/// Region labels from annotation presence alone, one per mask.
pub fn regions_from_masks(masks: &[LabelMask]) -> Vec<RegionLabel> {
    let annotated: Vec<bool> = masks.iter().map(|m| !m.is_empty()).collect();
    regions_from_presence(&annotated)
}

/// Assigns regions given which slices carry annotation. Unannotated slices,
/// including gaps inside the annotated range, are non-cardiac.
pub fn regions_from_presence(annotated: &[bool]) -> Vec<RegionLabel> {
    let cardiac: Vec<usize> = annotated
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect();
    let mut out = vec![RegionLabel::NonCardiac; annotated.len()];
    if cardiac.is_empty() {
        return out;
    }
    let counts = split_counts(cardiac.len()).expect("non-empty cardiac set");
    for (rank, &i) in cardiac.iter().enumerate() {
        out[i] = if rank < counts.base {
            RegionLabel::Base
        } else if rank < counts.base + counts.middle {
            RegionLabel::Middle
        } else {
            RegionLabel::Apex
        };
    }
    out
}

/// Per-slice region labels for a stack with ground-truth masks.
pub fn assign_regions(stack: &CmrStack) -> Result<Vec<RegionLabel>, StratifyError> {
    Ok(regions_from_masks(masks_of(stack)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::testutil::small_stack;
    use crate::domain::validate_stack;
    use proptest::prelude::*;
    use RegionLabel::*;

    fn counts(b: usize, m: usize, a: usize) -> RegionCounts {
        RegionCounts { base: b, middle: m, apex: a }
    }

    #[test]
    fn split_counts_examples() {
        assert_eq!(split_counts(10).unwrap(), counts(2, 6, 2));
        assert_eq!(split_counts(5).unwrap(), counts(1, 3, 1));
        assert_eq!(split_counts(7).unwrap(), counts(2, 4, 1));
        assert_eq!(split_counts(1).unwrap(), counts(0, 1, 0));
        assert_eq!(split_counts(2).unwrap(), counts(1, 1, 0));
        assert_eq!(split_counts(8).unwrap(), counts(2, 5, 1));
        assert_eq!(split_counts(0), Err(StratifyError::InvalidCount(0)));
    }

    #[test]
    fn cardiac_range_examples() {
        let mut filled = vec![true; 10];
        filled[0] = false;
        filled[9] = false;
        assert_eq!(cardiac_slice_range(&small_stack(&filled)).unwrap(), Some((1, 8)));
        assert_eq!(cardiac_slice_range(&small_stack(&[false; 5])).unwrap(), None);
        let mut one = vec![false; 7];
        one[4] = true;
        assert_eq!(cardiac_slice_range(&small_stack(&one)).unwrap(), Some((4, 4)));

        let mut no_masks = small_stack(&[true]);
        no_masks.gt_masks = None;
        assert!(matches!(
            cardiac_slice_range(&no_masks),
            Err(StratifyError::MissingMasks(_))
        ));
        assert!(assign_regions(&no_masks).is_err());
    }

    #[test]
    fn assign_twelve_slice_stack() {
        let mut filled = vec![true; 12];
        filled[0] = false;
        filled[11] = false;
        let regions = assign_regions(&small_stack(&filled)).unwrap();
        assert_eq!(
            regions,
            vec![
                NonCardiac, Base, Base, Middle, Middle, Middle, Middle, Middle, Middle, Apex,
                Apex, NonCardiac
            ]
        );
    }

    #[test]
    fn assign_eight_cardiac_slices() {
        let regions = assign_regions(&small_stack(&[true; 8])).unwrap();
        assert_eq!(regions, vec![Base, Base, Middle, Middle, Middle, Middle, Middle, Apex]);
    }

    #[test]
    fn all_empty_is_all_noncardiac() {
        let regions = assign_regions(&small_stack(&[false; 6])).unwrap();
        assert!(regions.iter().all(|r| *r == NonCardiac));
    }

    #[test]
    fn interior_gap_is_noncardiac_and_not_counted() {
        // 5 annotated slices around a gap: counts (1, 3, 1).
        let regions =
            assign_regions(&small_stack(&[true, true, false, true, true, true])).unwrap();
        assert_eq!(regions, vec![Base, Middle, NonCardiac, Middle, Middle, Apex]);
    }

    proptest! {
        #[test]
        fn split_counts_properties(s in 1usize..=1000) {
            let c = split_counts(s).unwrap();
            prop_assert_eq!(c.total(), s);
            let quota = |fifths: usize| fifths as f64 * s as f64 / 5.0;
            prop_assert!((c.base as f64 - quota(1)).abs() < 1.0);
            prop_assert!((c.middle as f64 - quota(3)).abs() < 1.0);
            prop_assert!((c.apex as f64 - quota(1)).abs() < 1.0);
            prop_assert!(c.middle >= 1);
            if s >= 5 {
                prop_assert!(c.middle >= c.base && c.middle >= c.apex);
            }
        }

        #[test]
        fn assignment_is_contiguous_and_idempotent(filled in proptest::collection::vec(any::<bool>(), 0..40)) {
            let mut stack = small_stack(&filled);
            let regions = assign_regions(&stack).unwrap();
            prop_assert_eq!(regions.len(), filled.len());
            stack.gt_regions = Some(regions.clone());
            prop_assert!(validate_stack(&stack).is_empty());
            prop_assert_eq!(assign_regions(&stack).unwrap(), regions);
        }
    }
}
