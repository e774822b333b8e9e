use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{mean, paired_ttest, sample_variance, welch_ttest, TTestResult, ALPHA};
use super::{DscTable, MetricsError};
use crate::domain::{LabelCode, Phase, RegionLabel};

/// Summary of one (region, label) cell, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub region: RegionLabel,
    pub label: LabelCode,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    /// Label-major, region in class order (NonCardiac first).
    pub cells: Vec<RegionCell>,
}

impl RegionStats {
    pub fn cell(&self, region: RegionLabel, label: LabelCode) -> &RegionCell {
        self.cells
            .iter()
            .find(|c| c.region == region && c.label == label)
            .expect("every region/label cell is present")
    }
}

fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let pct: Vec<f64> = values.iter().map(|v| v * 100.0).collect();
    let m = (!pct.is_empty()).then(|| mean(&pct));
    let sd = (pct.len() >= 2).then(|| sample_variance(&pct).sqrt());
    (m, sd)
}

/// Pools slice-level scores per (region, label). Non-cardiac slices with a
/// defined score (false positives) get their own cell.
pub fn region_stats(table: &DscTable) -> RegionStats {
    let mut cells = Vec::new();
    for label in LabelCode::FOREGROUND {
        for region in RegionLabel::ALL {
            let values = table.values(region, label);
            let (mean, sd) = summarize(&values);
            cells.push(RegionCell {
                region,
                label,
                n: values.len(),
                mean,
                sd,
            });
        }
    }
    RegionStats { cells }
}

/// Welch test of a region's scores against the middle region's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTest {
    pub label: LabelCode,
    pub region: RegionLabel,
    /// `None` when the samples are too small or both constant.
    pub test: Option<TTestResult>,
}

impl GapTest {
    pub fn significant(&self) -> bool {
        self.test.is_some_and(|t| t.significant_at_0_01)
    }
}

/// Base-vs-middle and apex-vs-middle tests for every label.
pub fn region_gap_tests(table: &DscTable) -> Vec<GapTest> {
    let mut out = Vec::new();
    for label in LabelCode::FOREGROUND {
        let middle = table.values(RegionLabel::Middle, label);
        for region in [RegionLabel::Base, RegionLabel::Apex] {
            let values = table.values(region, label);
            out.push(GapTest {
                label,
                region,
                test: welch_ttest(&values, &middle).ok(),
            });
        }
    }
    out
}

/// Change from a baseline arm for one (label, region), in percent. Positive
/// values are improvements: a higher mean and a lower SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub label: LabelCode,
    pub region: RegionLabel,
    pub n_pairs: usize,
    pub delta_mean: Option<f64>,
    pub delta_sd: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

type SliceKey = (String, Phase, usize, LabelCode);

fn keyed(table: &DscTable) -> BTreeMap<SliceKey, (RegionLabel, f64)> {
    table
        .rows
        .iter()
        .map(|r| ((r.stack_id.clone(), r.phase, r.slice_index, r.label), (r.region, r.dsc)))
        .collect()
}

/// Base and apex deltas of `other` against `baseline`, paired on the slice
/// and label keys defined in both tables.
pub fn delta_table(baseline: &DscTable, other: &DscTable) -> Result<Vec<DeltaCell>, MetricsError> {
    if baseline.cardiac_ranges != other.cardiac_ranges {
        return Err(MetricsError::KeyMismatch("tables were computed on different stacks".into()));
    }
    let a = keyed(baseline);
    let b = keyed(other);
    let mut pairs: BTreeMap<(LabelCode, RegionLabel), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, &(region, dsc_a)) in &a {
        let Some(&(region_b, dsc_b)) = b.get(key) else {
            continue;
        };
        if region != region_b {
            return Err(MetricsError::KeyMismatch(format!(
                "{}_{} slice {}: region {region} vs {region_b}",
                key.0, key.1, key.2
            )));
        }
        let e = pairs.entry((key.3, region)).or_default();
        e.0.push(dsc_a);
        e.1.push(dsc_b);
    }

    let mut out = Vec::new();
    for label in LabelCode::FOREGROUND {
        for region in [RegionLabel::Base, RegionLabel::Apex] {
            let (base_vals, other_vals) = pairs.remove(&(label, region)).unwrap_or_default();
            let (base_mean, base_sd) = summarize(&base_vals);
            let (other_mean, other_sd) = summarize(&other_vals);
            let diffs: Vec<f64> = base_vals.iter().zip(&other_vals).map(|(x, y)| y - x).collect();
            let p_value = match paired_ttest(&diffs) {
                Ok(t) => Some(t.p_two_sided),
                // constant nonzero shift: infinitely significant
                Err(MetricsError::ZeroVariance) => Some(if diffs[0] != 0.0 { 0.0 } else { 1.0 }),
                Err(_) => None,
            };
            out.push(DeltaCell {
                label,
                region,
                n_pairs: diffs.len(),
                delta_mean: base_mean.zip(other_mean).map(|(x, y)| y - x),
                delta_sd: base_sd.zip(other_sd).map(|(x, y)| x - y),
                p_value,
                significant: p_value.is_some_and(|p| p < ALPHA),
            });
        }
    }
    Ok(out)
}
