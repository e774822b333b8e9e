use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::{CmrStack, LabelCode, LabelMask, Phase, RegionLabel};
use crate::stratify::regions_from_masks;

/// Dice similarity of the pixel sets carrying `label`; `None` when both are
/// empty.
pub fn dice(gt: &LabelMask, pred: &LabelMask, label: LabelCode) -> Result<Option<f64>, MetricsError> {
    if gt.shape() != pred.shape() {
        return Err(MetricsError::ShapeMismatch {
            gt: gt.shape(),
            pred: pred.shape(),
        });
    }
    let code = label.code();
    let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
    for (&g, &p) in gt.labels.as_slice().iter().zip(pred.labels.as_slice()) {
        let (in_a, in_b) = (g == code, p == code);
        a += u64::from(in_a);
        b += u64::from(in_b);
        both += u64::from(in_a && in_b);
    }
    if a + b == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (a + b) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscRow {
    pub stack_id: String,
    pub phase: Phase,
    pub slice_index: usize,
    pub region: RegionLabel,
    pub label: LabelCode,
    pub dsc: f64,
}

/// Slice-level Dice rows, only where the score is defined.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DscTable {
    pub rows: Vec<DscRow>,
    /// Cardiac slice range of every evaluated (stack, phase) with one.
    pub cardiac_ranges: BTreeMap<(String, Phase), (usize, usize)>,
}

impl DscTable {
    pub fn for_label(&self, label: LabelCode) -> impl Iterator<Item = &DscRow> + '_ {
        self.rows.iter().filter(move |r| r.label == label)
    }

    pub fn values(&self, region: RegionLabel, label: LabelCode) -> Vec<f64> {
        self.for_label(label).filter(|r| r.region == region).map(|r| r.dsc).collect()
    }
}

/// Scores every ground-truth slice against its prediction. `predictions` is
/// keyed by `stack_key(stack_id, phase)`. Rows are sorted by
/// (stack_id, phase, slice_index, label).
pub fn dsc_table(
    gt_stacks: &[CmrStack],
    predictions: &BTreeMap<String, Vec<LabelMask>>,
) -> Result<DscTable, MetricsError> {
    let mut table = DscTable::default();
    for stack in gt_stacks {
        let key = stack.key();
        let gt = stack
            .gt_masks
            .as_ref()
            .ok_or_else(|| MetricsError::MissingGroundTruth(key.clone()))?;
        let pred = predictions
            .get(&key)
            .ok_or_else(|| MetricsError::MissingPrediction(key.clone()))?;
        if pred.len() != gt.len() {
            return Err(MetricsError::MissingPrediction(format!(
                "{key}: {} predicted slices for {} ground-truth slices",
                pred.len(),
                gt.len()
            )));
        }
        let regions = stack.gt_regions.clone().unwrap_or_else(|| regions_from_masks(gt));
        let cardiac: Vec<usize> = (0..regions.len()).filter(|&i| regions[i].is_cardiac()).collect();
        if let (Some(&lo), Some(&hi)) = (cardiac.first(), cardiac.last()) {
            table.cardiac_ranges.insert((stack.stack_id.clone(), stack.phase), (lo, hi));
        }
        for (i, (g, p)) in gt.iter().zip(pred).enumerate() {
            for label in LabelCode::FOREGROUND {
                if let Some(dsc) = dice(g, p, label)? {
                    table.rows.push(DscRow {
                        stack_id: stack.stack_id.clone(),
                        phase: stack.phase,
                        slice_index: i,
                        region: regions[i],
                        label,
                        dsc,
                    });
                }
            }
        }
    }
    table.rows.sort_by(|a, b| {
        (&a.stack_id, a.phase, a.slice_index, a.label).cmp(&(&b.stack_id, b.phase, b.slice_index, b.label))
    });
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::testutil::small_stack;
    use crate::domain::Grid;

    fn mask(h: usize, w: usize, data: Vec<u8>) -> LabelMask {
        LabelMask {
            labels: Grid::from_vec(h, w, data).unwrap(),
        }
    }

    #[test]
    fn dice_examples() {
        let a = mask(2, 4, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(2, 4, vec![0, 0, 1, 1, 1, 1, 0, 0]);
        let c = mask(2, 4, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let z = mask(2, 4, vec![0; 8]);
        assert_eq!(dice(&a, &a, LabelCode::Lvbp).unwrap(), Some(1.0));
        assert_eq!(dice(&a, &c, LabelCode::Lvbp).unwrap(), Some(0.0));
        assert_eq!(dice(&a, &b, LabelCode::Lvbp).unwrap(), Some(0.5));
        assert_eq!(dice(&z, &z, LabelCode::Lvbp).unwrap(), None);
        assert_eq!(dice(&a, &z, LabelCode::Lvbp).unwrap(), Some(0.0));
        assert!(matches!(
            dice(&a, &mask(4, 2, vec![0; 8]), LabelCode::Lvbp),
            Err(MetricsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn table_perfect_and_empty_predictions() {
        let stack = small_stack(&[false, true, true, true, true, false]);
        let gt = stack.gt_masks.clone().unwrap();
        let mut preds = BTreeMap::new();
        preds.insert(stack.key(), gt.clone());
        let t = dsc_table(std::slice::from_ref(&stack), &preds).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.dsc == 1.0 && r.label == LabelCode::Lvbp));
        assert_eq!(t.cardiac_ranges[&("s0".to_string(), Phase::Ed)], (1, 4));

        let blank: Vec<LabelMask> = gt.iter().map(|m| LabelMask::empty(m.shape().0, m.shape().1)).collect();
        preds.insert(stack.key(), blank);
        let t = dsc_table(std::slice::from_ref(&stack), &preds).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows.iter().all(|r| r.dsc == 0.0));
    }

    #[test]
    fn missing_prediction() {
        let stack = small_stack(&[true, true]);
        let err = dsc_table(&[stack], &BTreeMap::new()).unwrap_err();
        assert_eq!(err, MetricsError::MissingPrediction("s0_ED".into()));
    }
}
