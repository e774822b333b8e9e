use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{crop, pad_to_multiple, resize_bilinear, zscore, Augmentation};
use super::checkpoint::{Checkpoint, EpochLog};
use super::loss::{classification_loss, segmentation_loss, softmax, LossValue};
use super::net::{ClassifierNet, UNet, N_CLASSES};
use super::optim::{clip_grad_norm, poly_lr, Adam, Sgd};
use super::tensor::Scalar;
use super::{
    ClassifierConfig, ClassifierLoss, ModelConfig, ModelError, ModelKind, RegionScope, Result, SegmenterConfig,
};
use crate::domain::{CmrStack, DatasetIndex, Grid, LabelCode, LabelMask, Phase, RegionLabel, SliceImage, Split};
use crate::io::{load_stack, phase_dir};
use crate::metrics::dice;
use crate::sampler::{sample_batch, SamplerConfig, SamplerWeights};

const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

type StackMap = BTreeMap<(String, Phase), CmrStack>;

fn load_stacks(index: &DatasetIndex, ids: &[usize]) -> Result<StackMap> {
    let mut out = StackMap::new();
    for &i in ids {
        let r = &index.records[i];
        let key = (r.stack_id.clone(), r.phase);
        if !out.contains_key(&key) {
            let stack = load_stack(&phase_dir(&index.source_dir, &r.stack_id, r.phase))?;
            out.insert(key, stack);
        }
    }
    Ok(out)
}

fn slice_of<'a>(stacks: &'a StackMap, index: &DatasetIndex, id: usize) -> Result<(&'a SliceImage, Option<&'a LabelMask>)> {
    let r = &index.records[id];
    let stack = &stacks[&(r.stack_id.clone(), r.phase)];
    let slice = stack.slices.get(r.slice_index).ok_or_else(|| {
        ModelError::CorruptCheckpoint(format!("index refers to missing slice {} of {}", r.slice_index, stack.key()))
    })?;
    Ok((slice, stack.gt_masks.as_ref().map(|m| &m[r.slice_index])))
}

/// Evenly spaced subset of at most `n` items.
fn spread<T: Copy>(items: &[T], n: usize) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|k| items[k * items.len() / n]).collect()
}

pub(crate) struct SegSample<T> {
    pub image: Vec<T>,
    pub target: Vec<u8>,
    pub h: usize,
    pub w: usize,
}

/// Compound loss and summed parameter gradient over a batch.
pub(crate) fn segmentation_step<T: Scalar>(net: &UNet, params: &[T], batch: &[SegSample<T>]) -> (LossValue, Vec<T>) {
    let forwards: Vec<_> = batch.par_iter().map(|s| net.forward(params, &s.image, s.h, s.w)).collect();
    let (logits, caches): (Vec<_>, Vec<_>) = forwards.into_iter().unzip();
    let targets: Vec<&[u8]> = batch.iter().map(|s| s.target.as_slice()).collect();
    let (loss, dlogits) = segmentation_loss(&logits, &targets);
    let per_sample: Vec<Vec<T>> = caches
        .par_iter()
        .zip(dlogits.par_iter())
        .map(|(cache, d)| {
            let mut g = vec![T::zero(); params.len()];
            net.backward(params, &mut g, cache, d);
            g
        })
        .collect();
    let mut grad = vec![T::zero(); params.len()];
    for g in &per_sample {
        for (a, b) in grad.iter_mut().zip(g) {
            *a = *a + *b;
        }
    }
    (loss, grad)
}

fn prepare_seg_sample(pixels: &Grid<f32>, mask: &LabelMask, aug: &Augmentation, multiple: usize) -> SegSample<f32> {
    let (h, w) = pixels.shape();
    let img = zscore(&aug.apply_image(pixels.as_slice(), h, w));
    let target = aug.apply_mask(mask.labels.as_slice(), h, w);
    let (image, ph, pw) = pad_to_multiple(&img, 1, h, w, multiple, 0.0);
    let (target, _, _) = pad_to_multiple(&target, 1, h, w, multiple, 0);
    SegSample { image, target, h: ph, w: pw }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Region with the highest probability; ties go to the earlier class in
/// NonCardiac < Base < Middle < Apex order.
pub fn argmax_region(p: &[f64; 4]) -> RegionLabel {
    RegionLabel::from_index(argmax_first(p.iter().copied())).unwrap()
}

/// A segmenter ready for inference.
#[derive(Debug, Clone)]
pub struct Segmenter {
    net: UNet,
    params: Vec<f32>,
    pub content_hash: String,
}

impl Segmenter {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Segmenter)?;
        let ModelConfig::Segmenter(cfg) = &ck.config else {
            unreachable!("kind checked above")
        };
        let net = UNet::new(cfg.depth, cfg.base_channels);
        if net.tensors() != ck.tensors.as_slice() || net.n_params() != ck.params.len() {
            return Err(ModelError::CorruptCheckpoint("tensor table does not match the architecture".into()));
        }
        Ok(Self {
            net,
            params: ck.params.clone(),
            content_hash: ck.content_hash.clone(),
        })
    }

    pub fn predict(&self, slice: &SliceImage) -> LabelMask {
        predict_mask(&self.net, &self.params, &slice.pixels)
    }
}

fn predict_mask(net: &UNet, params: &[f32], pixels: &Grid<f32>) -> LabelMask {
    let (h, w) = pixels.shape();
    let (img, ph, pw) = pad_to_multiple(&zscore(pixels.as_slice()), 1, h, w, net.multiple(), 0.0);
    let (logits, _) = net.forward(params, &img, ph, pw);
    let logits = crop(&logits, N_CLASSES, ph, pw, h, w);
    let hw = h * w;
    let labels = (0..hw)
        .map(|i| argmax_first((0..N_CLASSES).map(|c| f64::from(logits[c * hw + i]))) as u8)
        .collect();
    LabelMask {
        labels: Grid::from_vec(h, w, labels).unwrap(),
    }
}

pub fn predict_segmentation(ck: &Checkpoint, slice: &SliceImage) -> Result<LabelMask> {
    Ok(Segmenter::from_checkpoint(ck)?.predict(slice))
}

/// A slice classifier ready for inference.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: ClassifierNet,
    params: Vec<f32>,
    input_size: usize,
    pub content_hash: String,
}

impl Classifier {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Classifier)?;
        let ModelConfig::Classifier(cfg) = &ck.config else {
            unreachable!("kind checked above")
        };
        let net = ClassifierNet::new(cfg.conv_blocks, cfg.channels);
        if net.tensors() != ck.tensors.as_slice() || net.n_params() != ck.params.len() {
            return Err(ModelError::CorruptCheckpoint("tensor table does not match the architecture".into()));
        }
        Ok(Self {
            net,
            params: ck.params.clone(),
            input_size: cfg.input_size,
            content_hash: ck.content_hash.clone(),
        })
    }

    pub fn probabilities(&self, slice: &SliceImage) -> [f64; 4] {
        let s = self.input_size;
        let input = zscore(&resize_bilinear(&slice.pixels, s, s));
        let (logits, _) = self.net.forward(&self.params, &input, s, s);
        let z: Vec<f64> = logits.iter().map(|&v| f64::from(v)).collect();
        let p = softmax(&z);
        [p[0], p[1], p[2], p[3]]
    }

    pub fn predict(&self, slice: &SliceImage) -> (RegionLabel, [f64; 4]) {
        let p = self.probabilities(slice);
        (argmax_region(&p), p)
    }
}

pub fn predict_region(ck: &Checkpoint, slice: &SliceImage) -> Result<(RegionLabel, [f64; 4])> {
    Ok(Classifier::from_checkpoint(ck)?.predict(slice))
}

/// Untrained segmenter checkpoint with the seeded initial weights.
pub fn init_segmenter(scope: RegionScope, config: &SegmenterConfig) -> Result<Checkpoint> {
    config.validate()?;
    let net = UNet::new(config.depth, config.base_channels);
    let params: Vec<f32> = net.init(&mut rng_stream(config.seed, STREAM_INIT));
    Ok(Checkpoint::new(scope, ModelConfig::Segmenter(config.clone()), None, vec![], net.tensors().to_vec(), params))
}

/// Untrained classifier checkpoint with the seeded initial weights.
pub fn init_classifier(config: &ClassifierConfig) -> Result<Checkpoint> {
    config.validate()?;
    let net = ClassifierNet::new(config.conv_blocks, config.channels);
    let params: Vec<f32> = net.init(&mut rng_stream(config.seed, STREAM_INIT));
    Ok(Checkpoint::new(
        RegionScope::All,
        ModelConfig::Classifier(config.clone()),
        None,
        vec![],
        net.tensors().to_vec(),
        params,
    ))
}

fn scope_records(index: &DatasetIndex, split: Split, scope: RegionScope) -> Vec<usize> {
    index
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split && scope.contains(r.region))
        .map(|(i, _)| i)
        .collect()
}

/// Trains a segmenter on the train-split slices of `scope`. Batches are
/// drawn from `sampler` when given, otherwise uniformly.
pub fn train_segmenter(
    index: &DatasetIndex,
    scope: RegionScope,
    sampler: Option<&SamplerWeights>,
    config: &SegmenterConfig,
) -> Result<Checkpoint> {
    config.validate()?;
    let train_ids = scope_records(index, Split::Train, scope);
    if train_ids.is_empty() {
        return Err(ModelError::EmptyScope(scope));
    }
    let weights = match sampler {
        Some(w) => {
            if scope != RegionScope::All {
                return Err(ModelError::InvalidConfig("a sampler can only be used with scope all".into()));
            }
            if w.config.batch_size != config.batch_size {
                return Err(ModelError::InvalidConfig(format!(
                    "sampler batch size {} differs from config batch size {}",
                    w.config.batch_size, config.batch_size
                )));
            }
            if w.record_ids.iter().any(|&i| index.records.get(i).is_none_or(|r| r.split != Split::Train)) {
                return Err(ModelError::InvalidConfig("sampler weights do not belong to this index".into()));
            }
            w.clone()
        }
        None => SamplerWeights::uniform(
            train_ids.clone(),
            SamplerConfig {
                ratio: 1.0,
                batch_size: config.batch_size,
                seed: config.seed,
            },
        )
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))?,
    };
    let val_ids = spread(&scope_records(index, Split::Val, scope), config.val_slices);
    let mut needed = weights.record_ids.clone();
    needed.extend(&val_ids);
    let stacks = load_stacks(index, &needed)?;

    let net = UNet::new(config.depth, config.base_channels);
    let mut params: Vec<f32> = net.init(&mut rng_stream(config.seed, STREAM_INIT));
    let mut batch_rng = rng_stream(config.seed, STREAM_BATCHES);
    let mut aug_rng = rng_stream(config.seed, STREAM_AUGMENT);
    let mut opt = Sgd::new(&config.optimizer, params.len());
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = poly_lr(config.optimizer.lr0, epoch, config.epochs, config.optimizer.poly_power);
        let mut loss_sum = 0.0;
        for b in 0..config.batches_per_epoch {
            let ids = sample_batch(&weights, &mut batch_rng);
            let mut batch = Vec::with_capacity(ids.len());
            for id in ids {
                let (slice, mask) = slice_of(&stacks, index, id)?;
                let mask = mask.ok_or_else(|| ModelError::InvalidConfig(format!("{} has no masks", slice.stack_id)))?;
                let aug = if config.augment {
                    Augmentation::random(&mut aug_rng)
                } else {
                    Augmentation::IDENTITY
                };
                batch.push(prepare_seg_sample(&slice.pixels, mask, &aug, net.multiple()));
            }
            let (loss, mut grad) = segmentation_step(&net, &params, &batch);
            if !loss.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::DivergedTraining { epoch, batch: b });
            }
            clip_grad_norm(&mut grad, config.grad_clip);
            opt.step(&mut params, &grad, lr);
            loss_sum += loss.total();
        }
        let val_metric = validation_dice(&net, &params, &stacks, index, &val_ids)?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / config.batches_per_epoch as f64,
            val_metric,
        });
    }
    Ok(Checkpoint::new(
        scope,
        ModelConfig::Segmenter(config.clone()),
        sampler.map(|w| w.config.clone()),
        log,
        net.tensors().to_vec(),
        params,
    ))
}

fn validation_dice(net: &UNet, params: &[f32], stacks: &StackMap, index: &DatasetIndex, ids: &[usize]) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for &id in ids {
        let (slice, mask) = slice_of(stacks, index, id)?;
        let Some(gt) = mask else { continue };
        let pred = predict_mask(net, params, &slice.pixels);
        for label in LabelCode::FOREGROUND {
            if let Some(d) = dice(gt, &pred, label).expect("prediction has the slice shape") {
                scores.push(d);
            }
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

pub(crate) fn classification_step<T: Scalar>(
    net: &ClassifierNet,
    params: &[T],
    inputs: &[Vec<T>],
    size: usize,
    targets: &[usize],
    class_weights: Option<&[f64; 4]>,
) -> (f64, Vec<T>) {
    let forwards: Vec<_> = inputs.par_iter().map(|x| net.forward(params, x, size, size)).collect();
    let (logits, caches): (Vec<_>, Vec<_>) = forwards.into_iter().unzip();
    let (loss, dlogits) = classification_loss(&logits, targets, class_weights);
    let per_sample: Vec<Vec<T>> = caches
        .par_iter()
        .zip(dlogits.par_iter())
        .map(|(cache, d)| {
            let mut g = vec![T::zero(); params.len()];
            net.backward(params, &mut g, cache, d);
            g
        })
        .collect();
    let mut grad = vec![T::zero(); params.len()];
    for g in &per_sample {
        for (a, b) in grad.iter_mut().zip(g) {
            *a = *a + *b;
        }
    }
    (loss, grad)
}

/// Trains the 4-class slice classifier on all train-split slices.
pub fn train_classifier(index: &DatasetIndex, config: &ClassifierConfig) -> Result<Checkpoint> {
    config.validate()?;
    let train_ids = scope_records(index, Split::Train, RegionScope::All);
    let mut counts = [0usize; 4];
    for &i in &train_ids {
        counts[index.records[i].region.index()] += 1;
    }
    if let Some(missing) = RegionLabel::ALL.into_iter().find(|r| counts[r.index()] == 0) {
        return Err(ModelError::MissingClass(missing));
    }
    let class_weights = match config.loss {
        ClassifierLoss::CrossEntropy => None,
        ClassifierLoss::WeightedCrossEntropy => {
            let n = train_ids.len() as f64;
            Some(std::array::from_fn::<f64, 4, _>(|c| n / (4.0 * counts[c] as f64)))
        }
    };
    let val_ids = scope_records(index, Split::Val, RegionScope::All);
    let mut needed = train_ids.clone();
    needed.extend(&val_ids);
    let stacks = load_stacks(index, &needed)?;
    let s = config.input_size;
    let resized = |id: usize| -> Result<Vec<f32>> {
        let (slice, _) = slice_of(&stacks, index, id)?;
        Ok(resize_bilinear(&slice.pixels, s, s))
    };
    let train_images: BTreeMap<usize, Vec<f32>> =
        train_ids.iter().map(|&i| Ok((i, resized(i)?))).collect::<Result<_>>()?;
    let val_inputs: Vec<(Vec<f32>, RegionLabel)> = val_ids
        .iter()
        .map(|&i| Ok((zscore(&resized(i)?), index.records[i].region)))
        .collect::<Result<_>>()?;

    let net = ClassifierNet::new(config.conv_blocks, config.channels);
    let mut params: Vec<f32> = net.init(&mut rng_stream(config.seed, STREAM_INIT));
    let mut order_rng = rng_stream(config.seed, STREAM_BATCHES);
    let mut aug_rng = rng_stream(config.seed, STREAM_AUGMENT);
    let mut opt = Adam::new(&config.optimizer, params.len());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order = train_ids.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<Vec<f32>> = chunk
                .iter()
                .map(|id| {
                    let img = &train_images[id];
                    let aug = if config.augment {
                        Augmentation::random(&mut aug_rng)
                    } else {
                        Augmentation::IDENTITY
                    };
                    zscore(&aug.apply_image(img, s, s))
                })
                .collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| index.records[i].region.index()).collect();
            let (loss, grad) = classification_step(&net, &params, &inputs, s, &targets, class_weights.as_ref());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::DivergedTraining { epoch, batch: b });
            }
            opt.step(&mut params, &grad);
            loss_sum += loss;
            n_batches += 1;
        }
        let val_metric = (!val_inputs.is_empty()).then(|| {
            let correct = val_inputs
                .par_iter()
                .filter(|(x, region)| {
                    let (logits, _) = net.forward(&params, x, s, s);
                    let z: Vec<f64> = logits.iter().map(|&v| f64::from(v)).collect();
                    argmax_first(z.into_iter()) == region.index()
                })
                .count();
            correct as f64 / val_inputs.len() as f64
        });
        log.push(EpochLog {
            epoch,
            lr: config.optimizer.lr0,
            train_loss: loss_sum / n_batches as f64,
            val_metric,
        });
    }
    Ok(Checkpoint::new(
        RegionScope::All,
        ModelConfig::Classifier(config.clone()),
        None,
        log,
        net.tensors().to_vec(),
        params,
    ))
}

/// Result of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub n_params: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over parameters whose gradient
    /// magnitude exceeds `1e-7`.
    pub max_rel_error: f64,
    /// `‖a − n‖ / (‖a‖ + ‖n‖)` over all parameters.
    pub global_rel_error: f64,
}

/// Gradient check of the compound loss on a depth-2, 2-channel U-Net with a
/// batch of two random 8×8 slices, in f64.
pub fn segmentation_gradient_check(seed: u64) -> GradientCheck {
    use rand::Rng;
    let net = UNet::new(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<f64> = net.init(&mut rng);
    // non-trivial norm parameters so their gradients are exercised
    for p in params.iter_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let (h, w) = (8, 8);
    let batch: Vec<SegSample<f64>> = (0..2)
        .map(|_| SegSample {
            image: (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
            target: (0..h * w).map(|_| rng.random_range(0..4u8)).collect(),
            h,
            w,
        })
        .collect();
    let (_, analytic) = segmentation_step(&net, &params, &batch);
    let eps = 1e-6;
    let mut numeric = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = segmentation_step(&net, &params, &batch).0.total();
        params[i] = orig - eps;
        let down = segmentation_step(&net, &params, &batch).0.total();
        params[i] = orig;
        numeric[i] = (up - down) / (2.0 * eps);
    }
    let mut max_rel: f64 = 0.0;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.iter().zip(&numeric) {
        let m = a.abs().max(n.abs());
        if m > 1e-7 {
            max_rel = max_rel.max((a - n).abs() / m);
        }
        diff2 += (a - n) * (a - n);
        a2 += a * a;
        n2 += n * n;
    }
    GradientCheck {
        n_params: params.len(),
        max_rel_error: max_rel,
        global_rel_error: diff2.sqrt() / (a2.sqrt() + n2.sqrt()),
    }
}
