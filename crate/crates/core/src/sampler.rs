//! Region-aware non-uniform batch sampling.
//!
//! Cardiac slices are weighted by a symmetric quadratic over their normalized
//! base-to-apex position, `w(x) = 1 + (ratio - 1)(2x - 1)^2`, so the ends of
//! the heart are drawn `ratio` times as often as its centre. Non-cardiac
//! slices keep exactly their uniform probability `1/N`; only the cardiac mass
//! is redistributed.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DatasetIndex, IndexRecord, Phase, RegionLabel, Split};

/// Sampling RNG. ChaCha keeps streams identical across platforms.
pub type SamplerRng = ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("slice {slice_index} lies outside the cardiac range {first}..={last}")]
    NotCardiac { slice_index: usize, first: usize, last: usize },
    #[error("no records to sample from")]
    EmptyIndex,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Named sampling levels: ratio of maximum to minimum cardiac probability.
pub const RATIO_LOW: f64 = 4.0;
pub const RATIO_HIGH: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ratio: RATIO_HIGH,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return Err(SamplerError::InvalidConfig(format!("ratio {} must be >= 1", self.ratio)));
        }
        if self.batch_size < 1 {
            return Err(SamplerError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> SamplerRng {
        SamplerRng::seed_from_u64(self.seed)
    }
}

/// Position of a cardiac slice within its stack's cardiac range, 0 at the
/// most basal and 1 at the most apical slice; 0.5 for a single-slice range.
pub fn normalized_position(slice_index: usize, cardiac_range: (usize, usize)) -> Result<f64, SamplerError> {
    let (first, last) = cardiac_range;
    if slice_index < first || slice_index > last {
        return Err(SamplerError::NotCardiac { slice_index, first, last });
    }
    if first == last {
        return Ok(0.5);
    }
    Ok((slice_index - first) as f64 / (last - first) as f64)
}

/// Quadratic cardiac sampling weight; `ratio` at both ends, 1 at the centre.
pub fn cardiac_weight(x: f64, ratio: f64) -> f64 {
    let u = 2.0 * x - 1.0;
    1.0 + (ratio - 1.0) * u * u
}

/// First and last cardiac slice index of each (stack, phase) in `records`.
pub fn cardiac_ranges<'a>(
    records: impl IntoIterator<Item = &'a IndexRecord>,
) -> BTreeMap<(String, Phase), (usize, usize)> {
    let mut out: BTreeMap<(String, Phase), (usize, usize)> = BTreeMap::new();
    for r in records {
        if !r.region.is_cardiac() {
            continue;
        }
        out.entry((r.stack_id.clone(), r.phase))
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(r.slice_index);
                *hi = (*hi).max(r.slice_index);
            })
            .or_insert((r.slice_index, r.slice_index));
    }
    out
}

/// Categorical distribution over train records.
#[derive(Debug, Clone)]
pub struct SamplerWeights {
    /// Positions in the source index's `records` of the sampled records.
    pub record_ids: Vec<usize>,
    pub probabilities: Vec<f64>,
    /// Normalized position of each cardiac record; `None` for non-cardiac.
    pub positions: Vec<Option<f64>>,
    pub config: SamplerConfig,
    dist: WeightedIndex<f64>,
}

impl SamplerWeights {
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    /// Uniform distribution over the given record ids.
    pub fn uniform(record_ids: Vec<usize>, config: SamplerConfig) -> Result<Self, SamplerError> {
        if record_ids.is_empty() {
            return Err(SamplerError::EmptyIndex);
        }
        let n = record_ids.len();
        let probabilities = vec![1.0 / n as f64; n];
        let positions = vec![None; n];
        Self::from_parts(record_ids, probabilities, positions, config)
    }

    fn from_parts(
        record_ids: Vec<usize>,
        probabilities: Vec<f64>,
        positions: Vec<Option<f64>>,
        config: SamplerConfig,
    ) -> Result<Self, SamplerError> {
        let dist = WeightedIndex::new(&probabilities)
            .map_err(|e| SamplerError::InvalidConfig(e.to_string()))?;
        Ok(Self { record_ids, probabilities, positions, config, dist })
    }
}

/// Builds the quadratic-profile distribution over the train records of `index`.
pub fn build_weights(index: &DatasetIndex, config: &SamplerConfig) -> Result<SamplerWeights, SamplerError> {
    config.validate()?;
    let train: Vec<(usize, &IndexRecord)> = index
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(SamplerError::EmptyIndex);
    }
    let ranges = cardiac_ranges(train.iter().map(|(_, r)| *r));
    let n = train.len();
    let uniform = 1.0 / n as f64;

    let mut positions = Vec::with_capacity(n);
    for (_, r) in &train {
        let pos = if r.region == RegionLabel::NonCardiac {
            None
        } else {
            let range = ranges[&(r.stack_id.clone(), r.phase)];
            Some(normalized_position(r.slice_index, range)?)
        };
        positions.push(pos);
    }

    let n_cardiac = positions.iter().filter(|p| p.is_some()).count();
    let probabilities: Vec<f64> = if config.ratio == 1.0 {
        vec![uniform; n]
    } else {
        let weights: Vec<f64> = positions
            .iter()
            .map(|p| p.map_or(0.0, |x| cardiac_weight(x, config.ratio)))
            .collect();
        let total: f64 = weights.iter().sum();
        let cardiac_mass = n_cardiac as f64 / n as f64;
        positions
            .iter()
            .zip(&weights)
            .map(|(p, w)| match p {
                None => uniform,
                Some(_) => cardiac_mass * w / total,
            })
            .collect()
    };
    let record_ids = train.iter().map(|(i, _)| *i).collect();
    SamplerWeights::from_parts(record_ids, probabilities, positions, config.clone())
}

/// Draws `weights.config.batch_size` record ids i.i.d. with replacement.
pub fn sample_batch(weights: &SamplerWeights, rng: &mut SamplerRng) -> Vec<usize> {
    (0..weights.config.batch_size)
        .map(|_| weights.record_ids[weights.dist.sample(rng)])
        .collect()
}
