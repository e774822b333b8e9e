//! Inference over the four experimental arms.
//!
//! A predictions store holds one `<stack_id>_<phase>/` directory per test
//! stack (masks only) and `routing.jsonl`, one [`RoutingRecord`] per slice
//! ordered by (stack_id, phase, slice_index).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{stack_key, CmrStack, DatasetIndex, LabelMask, Phase, RegionLabel, Split};
use crate::io::{self, io_err, load_masks, load_stack, phase_dir, save_masks, write_atomic, IoError};
use crate::models::{Checkpoint, Classifier, ModelError, Segmenter};

pub const ROUTING_FILE: &str = "routing.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Sampled,
    Classified,
    Oracle,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Sampled, Arm::Classified, Arm::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Sampled => "sampled",
            Arm::Classified => "classified",
            Arm::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown arm {s:?} (expected baseline, sampled, classified or oracle)"))
    }
}

/// The model a slice was segmented with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelUsed {
    Baseline,
    Sampled,
    Base,
    Middle,
    Apex,
}

impl ModelUsed {
    fn for_region(region: RegionLabel) -> Self {
        match region {
            RegionLabel::NonCardiac => ModelUsed::Baseline,
            RegionLabel::Base => ModelUsed::Base,
            RegionLabel::Middle => ModelUsed::Middle,
            RegionLabel::Apex => ModelUsed::Apex,
        }
    }

    /// The region this model specialises in, if any.
    pub fn region(self) -> Option<RegionLabel> {
        match self {
            ModelUsed::Base => Some(RegionLabel::Base),
            ModelUsed::Middle => Some(RegionLabel::Middle),
            ModelUsed::Apex => Some(RegionLabel::Apex),
            ModelUsed::Baseline | ModelUsed::Sampled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub stack_id: String,
    pub phase: Phase,
    pub slice_index: usize,
    /// Classifier output (classified arm) or ground truth (oracle arm);
    /// absent for the single-model arms.
    pub predicted_region: Option<RegionLabel>,
    pub model_used: ModelUsed,
    pub gt_region: Option<RegionLabel>,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub baseline: Checkpoint,
    pub base_model: Option<Checkpoint>,
    pub middle_model: Option<Checkpoint>,
    pub apex_model: Option<Checkpoint>,
    pub classifier: Option<Checkpoint>,
    pub sampler_model: Option<Checkpoint>,
}

impl ModelBundle {
    pub fn baseline_only(baseline: Checkpoint) -> Self {
        Self {
            baseline,
            base_model: None,
            middle_model: None,
            apex_model: None,
            classifier: None,
            sampler_model: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("the {arm} arm needs a {model} model")]
    MissingModel { arm: Arm, model: &'static str },
    #[error("stack {0} has no ground-truth regions, required by the oracle arm")]
    MissingGtRegions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("stack {stack_id}")]
    Stack {
        stack_id: String,
        #[source]
        source: Box<PipelineError>,
    },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

struct Routed {
    base: Segmenter,
    middle: Segmenter,
    apex: Segmenter,
}

/// Models of one arm, decoded once and reused across stacks.
pub struct Router {
    arm: Arm,
    single: Segmenter,
    routed: Option<Routed>,
    classifier: Option<Classifier>,
}

fn required<'a>(arm: Arm, model: &'static str, ck: &'a Option<Checkpoint>) -> Result<&'a Checkpoint> {
    ck.as_ref().ok_or(PipelineError::MissingModel { arm, model })
}

impl Router {
    pub fn new(arm: Arm, bundle: &ModelBundle) -> Result<Self> {
        let single = match arm {
            Arm::Sampled => Segmenter::from_checkpoint(required(arm, "sampler", &bundle.sampler_model)?)?,
            _ => Segmenter::from_checkpoint(&bundle.baseline)?,
        };
        let routed = match arm {
            Arm::Classified | Arm::Oracle => Some(Routed {
                base: Segmenter::from_checkpoint(required(arm, "base", &bundle.base_model)?)?,
                middle: Segmenter::from_checkpoint(required(arm, "middle", &bundle.middle_model)?)?,
                apex: Segmenter::from_checkpoint(required(arm, "apex", &bundle.apex_model)?)?,
            }),
            _ => None,
        };
        let classifier = match arm {
            Arm::Classified => Some(Classifier::from_checkpoint(required(arm, "classifier", &bundle.classifier)?)?),
            _ => None,
        };
        Ok(Self {
            arm,
            single,
            routed,
            classifier,
        })
    }

    fn segmenter(&self, used: ModelUsed) -> &Segmenter {
        let routed = self.routed.as_ref();
        match used {
            ModelUsed::Baseline | ModelUsed::Sampled => &self.single,
            ModelUsed::Base => &routed.expect("routed arm").base,
            ModelUsed::Middle => &routed.expect("routed arm").middle,
            ModelUsed::Apex => &routed.expect("routed arm").apex,
        }
    }

    /// One mask and one routing record per slice, in slice order.
    pub fn run(&self, stack: &CmrStack) -> Result<(Vec<LabelMask>, Vec<RoutingRecord>)> {
        if self.arm == Arm::Oracle && stack.gt_regions.is_none() {
            return Err(PipelineError::MissingGtRegions(stack.key()));
        }
        let mut masks = Vec::with_capacity(stack.len());
        let mut records = Vec::with_capacity(stack.len());
        for (i, slice) in stack.slices.iter().enumerate() {
            let gt_region = stack.gt_regions.as_ref().map(|r| r[i]);
            let predicted_region = match self.arm {
                Arm::Baseline | Arm::Sampled => None,
                Arm::Classified => Some(self.classifier.as_ref().expect("classified arm").predict(slice).0),
                Arm::Oracle => gt_region,
            };
            let model_used = match (self.arm, predicted_region) {
                (Arm::Sampled, _) => ModelUsed::Sampled,
                (_, Some(region)) => ModelUsed::for_region(region),
                (_, None) => ModelUsed::Baseline,
            };
            masks.push(self.segmenter(model_used).predict(slice));
            records.push(RoutingRecord {
                stack_id: stack.stack_id.clone(),
                phase: stack.phase,
                slice_index: slice.slice_index,
                predicted_region,
                model_used,
                gt_region,
            });
        }
        Ok((masks, records))
    }
}

pub fn run_arm(arm: Arm, bundle: &ModelBundle, stack: &CmrStack) -> Result<(Vec<LabelMask>, Vec<RoutingRecord>)> {
    Router::new(arm, bundle)?.run(stack)
}

/// Runs `arm` over the test split of `index` and writes a predictions store
/// under `out_dir`. Returns `out_dir`.
pub fn run_dataset(arm: Arm, bundle: &ModelBundle, index: &DatasetIndex, out_dir: &Path) -> Result<PathBuf> {
    let router = Router::new(arm, bundle)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stacks = index.stack_phases(Split::Test);
    let per_stack: Vec<Vec<RoutingRecord>> = stacks
        .par_iter()
        .map(|(id, phase)| {
            let annotate = |e: PipelineError| PipelineError::Stack {
                stack_id: id.clone(),
                source: Box::new(e),
            };
            let stack = load_stack(&phase_dir(&index.source_dir, id, *phase)).map_err(|e| annotate(e.into()))?;
            let (masks, records) = router.run(&stack).map_err(annotate)?;
            save_masks(id, *phase, &masks, &out_dir.join(stack.key())).map_err(|e| annotate(e.into()))?;
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<RoutingRecord> = per_stack.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.stack_id, a.phase, a.slice_index).cmp(&(&b.stack_id, b.phase, b.slice_index)));
    let mut log = String::new();
    for r in &records {
        log.push_str(&serde_json::to_string(r).expect("record serializes"));
        log.push('\n');
    }
    write_atomic(&out_dir.join(ROUTING_FILE), log.as_bytes())?;
    Ok(out_dir.to_path_buf())
}

pub fn read_routing(store: &Path) -> Result<Vec<RoutingRecord>> {
    let path = store.join(ROUTING_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| {
                IoError::Json {
                    path: path.clone(),
                    source,
                }
                .into()
            })
        })
        .collect()
}

/// Predicted masks of every stack in the routing log, keyed by
/// `<stack_id>_<phase>`.
pub fn load_predictions(store: &Path) -> Result<BTreeMap<String, Vec<LabelMask>>> {
    let mut keys: Vec<String> = read_routing(store)?
        .iter()
        .map(|r| stack_key(&r.stack_id, r.phase))
        .collect();
    keys.dedup();
    let mut out = BTreeMap::new();
    for key in keys {
        let (_, masks) = load_masks(&store.join(&key))?;
        out.insert(key, masks);
    }
    Ok(out)
}

/// Loads the ground-truth test stacks of `index` in sorted order.
pub fn load_test_stacks(index: &DatasetIndex) -> io::Result<Vec<CmrStack>> {
    index
        .stack_phases(Split::Test)
        .par_iter()
        .map(|(id, phase)| load_stack(&phase_dir(&index.source_dir, id, *phase)))
        .collect()
}
