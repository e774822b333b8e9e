//! Evaluation: Dice scores, base-to-apex profiles, per-region statistics,
//! classifier metrics and significance tests.

mod classify;
mod dice;
mod profile;
pub mod stats;
mod tables;

use thiserror::Error;

pub use classify::{classifier_metrics, ClassMetrics, ClassifierMetrics, ConfusionMatrix};
pub use dice::{dice, dsc_table, DscRow, DscTable};
pub use profile::{
    aggregate_profiles, interpolate_profile, label_profile, stack_profiles, DscProfile, PROFILE_POINTS,
};
pub use stats::{paired_ttest, student_t_two_sided_p, welch_ttest, TTestResult, ALPHA};
pub use tables::{delta_table, region_gap_tests, region_stats, DeltaCell, GapTest, RegionCell, RegionStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: ground truth {gt:?}, prediction {pred:?}")]
    ShapeMismatch { gt: (usize, usize), pred: (usize, usize) },
    #[error("no prediction for {0}")]
    MissingPrediction(String),
    #[error("empty input")]
    EmptyInput,
    #[error("positions must be strictly increasing within [0, 1]")]
    InvalidPositions,
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("need at least 2 paired values, got {0}")]
    TooFew(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("tables do not cover the same keys: {0}")]
    KeyMismatch(String),
    #[error("stack {0} has no ground-truth masks")]
    MissingGroundTruth(String),
}
