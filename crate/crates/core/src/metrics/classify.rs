use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::RegionLabel;

/// Region confusion counts; rows are true classes, columns predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: RegionLabel, predicted: RegionLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..4).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64)
    }
}

impl FromIterator<(RegionLabel, RegionLabel)> for ConfusionMatrix {
    fn from_iter<I: IntoIterator<Item = (RegionLabel, RegionLabel)>>(iter: I) -> Self {
        let mut cm = Self::default();
        for (t, p) in iter {
            cm.record(t, p);
        }
        cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub region: RegionLabel,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
}

/// Per-class precision and recall plus support-weighted averages. A class
/// that is never predicted has no precision and contributes 0 to the
/// weighted precision.
pub fn classifier_metrics(cm: &ConfusionMatrix) -> Result<ClassifierMetrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let c = &cm.counts;
    let per_class: Vec<ClassMetrics> = RegionLabel::ALL
        .iter()
        .map(|&region| {
            let i = region.index();
            let tp = c[i][i];
            let row: u64 = c[i].iter().sum();
            let col: u64 = (0..4).map(|r| c[r][i]).sum();
            ClassMetrics {
                region,
                precision: (col > 0).then(|| tp as f64 / col as f64),
                recall: (row > 0).then(|| tp as f64 / row as f64),
                support: row,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> Option<f64>| {
        per_class.iter().map(|m| m.support as f64 * f(m).unwrap_or(0.0)).sum::<f64>() / total as f64
    };
    Ok(ClassifierMetrics {
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        per_class,
    })
}
