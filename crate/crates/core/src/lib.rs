//! Region-aware segmentation of short-axis cardiac MR stacks.
//!
//! Slices are stratified into non-cardiac, base, middle and apex regions from
//! their annotations. Three training regimes are supported: a single baseline
//! segmenter, a segmenter trained with position-weighted batch sampling, and a
//! slice classifier that routes each slice to a region-specific segmenter.
//! Evaluation compares regimes per region with Dice scores, interpolated
//! base-to-apex profiles, and Welch / paired t-tests.

pub mod domain;
pub mod io;
pub mod stratify;
pub mod phantom;
pub mod sampler;
pub mod metrics;
pub mod models;
pub mod pipeline;
