//! Compound soft-Dice + cross-entropy segmentation loss and the classifier's
//! cross-entropy, with gradients with respect to the logits.

use super::net::N_CLASSES;
use super::tensor::Scalar;

/// Smoothing term of the soft-Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Per-pixel softmax over `4 × hw` logits, in f64.
pub fn softmax_pixels<T: Scalar>(logits: &[T], hw: usize) -> Vec<f64> {
    let mut p = vec![0.0; N_CLASSES * hw];
    for i in 0..hw {
        let mx = (0..N_CLASSES).map(|c| logits[c * hw + i].f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..N_CLASSES {
            let e = (logits[c * hw + i].f64() - mx).exp();
            p[c * hw + i] = e;
            z += e;
        }
        for c in 0..N_CLASSES {
            p[c * hw + i] /= z;
        }
    }
    p
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Soft Dice of each foreground class over a batch of probability maps.
pub fn soft_dice(probs: &[&[f64]], targets: &[&[u8]], smooth: f64) -> [f64; 3] {
    let mut inter = [0.0; 3];
    let mut sum = [0.0; 3];
    for (p, t) in probs.iter().zip(targets) {
        let hw = t.len();
        for c in 1..N_CLASSES {
            for (i, &y) in t.iter().enumerate() {
                let pc = p[c * hw + i];
                let yc = f64::from(u8::from(y as usize == c));
                inter[c - 1] += pc * yc;
                sum[c - 1] += pc + yc;
            }
        }
    }
    std::array::from_fn(|k| (2.0 * inter[k] + smooth) / (sum[k] + smooth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub ce: f64,
    pub dice: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.ce + self.dice
    }
}

/// Loss of a batch: mean pixel cross-entropy plus `1 -` mean foreground
/// batch soft-Dice. Returns the logit gradients of each sample.
pub fn segmentation_loss<T: Scalar>(logits: &[Vec<T>], targets: &[&[u8]]) -> (LossValue, Vec<Vec<T>>) {
    let probs: Vec<Vec<f64>> = logits.iter().zip(targets).map(|(l, t)| softmax_pixels(l, t.len())).collect();
    let n_pix: usize = targets.iter().map(|t| t.len()).sum();

    let mut inter = [0.0; 3];
    let mut sum = [0.0; 3];
    let mut ce = 0.0;
    for (p, t) in probs.iter().zip(targets) {
        let hw = t.len();
        for (i, &y) in t.iter().enumerate() {
            ce -= p[y as usize * hw + i].max(f64::MIN_POSITIVE).ln();
            for c in 1..N_CLASSES {
                let pc = p[c * hw + i];
                let yc = f64::from(u8::from(y as usize == c));
                inter[c - 1] += pc * yc;
                sum[c - 1] += pc + yc;
            }
        }
    }
    ce /= n_pix as f64;
    let dc: [f64; 3] = std::array::from_fn(|k| (2.0 * inter[k] + DICE_SMOOTH) / (sum[k] + DICE_SMOOTH));
    let dice = 1.0 - dc.iter().sum::<f64>() / 3.0;

    // d(dice)/d(p_c) at a pixel = -(1/3) (2 y_c S_c - (2 I_c + s)) / S_c^2
    let coef: [(f64, f64); 3] = std::array::from_fn(|k| {
        let s = sum[k] + DICE_SMOOTH;
        (-2.0 / (3.0 * s), (2.0 * inter[k] + DICE_SMOOTH) / (3.0 * s * s))
    });
    let grads = probs
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let hw = t.len();
            let mut d = vec![T::zero(); N_CLASSES * hw];
            let mut g = [0.0; N_CLASSES];
            for (i, &y) in t.iter().enumerate() {
                g[0] = 0.0;
                for c in 1..N_CLASSES {
                    let (a, b) = coef[c - 1];
                    g[c] = if y as usize == c { a + b } else { b };
                }
                let pg: f64 = (0..N_CLASSES).map(|c| p[c * hw + i] * g[c]).sum();
                for c in 0..N_CLASSES {
                    let pc = p[c * hw + i];
                    let yc = f64::from(u8::from(y as usize == c));
                    let v = (pc - yc) / n_pix as f64 + pc * (g[c] - pg);
                    d[c * hw + i] = T::of(v);
                }
            }
            d
        })
        .collect();
    (LossValue { ce, dice }, grads)
}

/// Weighted-mean cross-entropy over a batch of 4-logit vectors.
/// `class_weights` of `None` means unweighted.
pub fn classification_loss<T: Scalar>(
    logits: &[Vec<T>],
    targets: &[usize],
    class_weights: Option<&[f64; 4]>,
) -> (f64, Vec<Vec<T>>) {
    let w = |y: usize| class_weights.map_or(1.0, |cw| cw[y]);
    let total_w: f64 = targets.iter().map(|&y| w(y)).sum();
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .zip(targets)
        .map(|(l, &y)| {
            let z: Vec<f64> = l.iter().map(|v| v.f64()).collect();
            let p = softmax(&z);
            loss -= w(y) * p[y].max(f64::MIN_POSITIVE).ln();
            (0..N_CLASSES)
                .map(|c| T::of(w(y) * (p[c] - f64::from(u8::from(c == y))) / total_w))
                .collect()
        })
        .collect();
    (loss / total_w, grads)
}
