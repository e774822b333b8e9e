use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DscTable, MetricsError};
use crate::domain::{LabelCode, Phase};
use crate::sampler::normalized_position;

/// Grid size of an interpolated profile; index k is position k/100.
pub const PROFILE_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscProfile {
    pub label: LabelCode,
    pub values: Vec<f64>,
    pub n_stacks: usize,
}

/// Piecewise-linear interpolation of (position, value) points onto the
/// 101-point grid, clamped to the end values outside the points' hull.
pub fn interpolate_profile(points: &[(f64, f64)]) -> Result<Vec<f64>, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let ordered = points.windows(2).all(|w| w[0].0 < w[1].0);
    let in_range = points.iter().all(|p| (0.0..=1.0).contains(&p.0));
    if !ordered || !in_range {
        return Err(MetricsError::InvalidPositions);
    }
    let (first, last) = (points[0], points[points.len() - 1]);
    let mut out = Vec::with_capacity(PROFILE_POINTS);
    let mut seg = 0;
    for k in 0..PROFILE_POINTS {
        let x = k as f64 / (PROFILE_POINTS - 1) as f64;
        let v = if x <= first.0 {
            first.1
        } else if x >= last.0 {
            last.1
        } else {
            while points[seg + 1].0 < x {
                seg += 1;
            }
            let (x0, y0) = points[seg];
            let (x1, y1) = points[seg + 1];
            if x == x1 {
                y1
            } else {
                y0 + (x - x0) / (x1 - x0) * (y1 - y0)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Pointwise mean of per-stack profiles. Values at each grid point are summed
/// in sorted order, so the result does not depend on input order.
pub fn aggregate_profiles(profiles: &[Vec<f64>], label: LabelCode) -> Result<DscProfile, MetricsError> {
    if profiles.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if profiles.iter().any(|p| p.len() != PROFILE_POINTS) {
        return Err(MetricsError::InvalidPositions);
    }
    let n = profiles.len();
    let mut column = vec![0.0; n];
    let values = (0..PROFILE_POINTS)
        .map(|k| {
            for (c, p) in column.iter_mut().zip(profiles) {
                *c = p[k];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n as f64
        })
        .collect();
    Ok(DscProfile {
        label,
        values,
        n_stacks: n,
    })
}

/// One interpolated profile per (stack, phase) that has at least one defined
/// cardiac-slice score for `label`, in key order.
pub fn stack_profiles(table: &DscTable, label: LabelCode) -> Result<Vec<Vec<f64>>, MetricsError> {
    let mut points: BTreeMap<(String, Phase), Vec<(f64, f64)>> = BTreeMap::new();
    for row in table.for_label(label).filter(|r| r.region.is_cardiac()) {
        let key = (row.stack_id.clone(), row.phase);
        let Some(&range) = table.cardiac_ranges.get(&key) else {
            continue;
        };
        let x = normalized_position(row.slice_index, range).map_err(|_| MetricsError::InvalidPositions)?;
        points.entry(key).or_default().push((x, row.dsc));
    }
    points
        .into_values()
        .map(|mut p| {
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            interpolate_profile(&p)
        })
        .collect()
}

/// Mean profile across stacks; `None` if no stack has a defined score.
pub fn label_profile(table: &DscTable, label: LabelCode) -> Result<Option<DscProfile>, MetricsError> {
    let profiles = stack_profiles(table, label)?;
    if profiles.is_empty() {
        return Ok(None);
    }
    aggregate_profiles(&profiles, label).map(Some)
}
