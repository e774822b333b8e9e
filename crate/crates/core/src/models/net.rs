//! The two network architectures over a flat parameter vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    add_into, maxpool_backward, pair_mut, maxpool_forward, pointwise_backward, pointwise_forward, upconv_backward,
    upconv_forward, ConvUnit, Layout, Range, TensorSpec, UnitCache, LEAKY_SLOPE,
};
use super::tensor::{matmul, Scalar};

pub(crate) const N_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy)]
struct UpConv {
    w: Range,
    b: Range,
    cin: usize,
    cout: usize,
}

/// 2-D U-Net: `depth` resolution levels, two conv units per level, channels
/// doubling per level from `base`, transposed-conv upsampling, skip
/// concatenation (skip channels first) and a 1×1 head.
#[derive(Debug, Clone)]
pub struct UNet {
    pub depth: usize,
    pub base: usize,
    layout: Layout,
    enc: Vec<[ConvUnit; 2]>,
    ups: Vec<UpConv>,
    dec: Vec<[ConvUnit; 2]>,
    head_w: Range,
    head_b: Range,
}

pub(crate) struct UNetCache<T> {
    h: usize,
    w: usize,
    enc: Vec<[UnitCache<T>; 2]>,
    pools: Vec<Vec<u32>>,
    dec: Vec<Option<[UnitCache<T>; 2]>>,
}

fn run_block<T: Scalar>(units: &[ConvUnit; 2], p: &[T], x: Vec<T>, h: usize, w: usize) -> [UnitCache<T>; 2] {
    let a = units[0].forward(p, x, h, w);
    let b = units[1].forward(p, a.out.clone(), h, w);
    [a, b]
}

#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    units: &[ConvUnit; 2],
    p: &[T],
    g: &mut [T],
    cache: &[UnitCache<T>; 2],
    d: Vec<T>,
    h: usize,
    w: usize,
    need_dx: bool,
) -> Option<Vec<T>> {
    let d = units[1].backward(p, g, &cache[1], d, h, w, true).unwrap();
    units[0].backward(p, g, &cache[0], d, h, w, need_dx)
}

impl UNet {
    pub fn new(depth: usize, base: usize) -> Self {
        assert!(depth >= 2 && base >= 1);
        let mut layout = Layout::default();
        let ch = |l: usize| base << l;
        let mut enc = Vec::new();
        for l in 0..depth {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            enc.push([
                ConvUnit::new(&mut layout, &format!("enc{l}.0"), cin, ch(l)),
                ConvUnit::new(&mut layout, &format!("enc{l}.1"), ch(l), ch(l)),
            ]);
        }
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for l in 0..depth - 1 {
            let (cin, cout) = (ch(l + 1), ch(l));
            ups.push(UpConv {
                w: layout.add(format!("up{l}.weight"), vec![cout, 2, 2, cin]),
                b: layout.add(format!("up{l}.bias"), vec![cout]),
                cin,
                cout,
            });
            dec.push([
                ConvUnit::new(&mut layout, &format!("dec{l}.0"), 2 * cout, cout),
                ConvUnit::new(&mut layout, &format!("dec{l}.1"), cout, cout),
            ]);
        }
        let head_w = layout.add("head.weight".into(), vec![N_CLASSES, base]);
        let head_b = layout.add("head.bias".into(), vec![N_CLASSES]);
        Self {
            depth,
            base,
            layout,
            enc,
            ups,
            dec,
            head_w,
            head_b,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    /// Spatial sizes must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        init_params(&self.layout, rng)
    }

    /// Logits `4 × h × w` for a single-channel image.
    pub(crate) fn forward<T: Scalar>(&self, p: &[T], image: &[T], h: usize, w: usize) -> (Vec<T>, UNetCache<T>) {
        let m = self.multiple();
        assert!(h % m == 0 && w % m == 0, "input {h}x{w} not a multiple of {m}");
        let mut enc = Vec::with_capacity(self.depth);
        let mut pools = Vec::new();
        let mut x = image.to_vec();
        for l in 0..self.depth {
            let (hl, wl) = (h >> l, w >> l);
            let cache = run_block(&self.enc[l], p, x, hl, wl);
            x = if l + 1 < self.depth {
                let (pooled, arg) = maxpool_forward(&cache[1].out, self.enc[l][1].cout, hl, wl);
                pools.push(arg);
                pooled
            } else {
                Vec::new()
            };
            enc.push(cache);
        }
        let mut dec: Vec<Option<[UnitCache<T>; 2]>> = (0..self.depth - 1).map(|_| None).collect();
        for l in (0..self.depth - 1).rev() {
            let (hl, wl) = (h >> l, w >> l);
            let below = match &dec.get(l + 1) {
                Some(Some(c)) => &c[1].out,
                _ => &enc[l + 1][1].out,
            };
            let up = &self.ups[l];
            let upsampled = upconv_forward(up.w.of(p), up.b.of(p), below, up.cin, up.cout, hl >> 1, wl >> 1);
            let mut cat = enc[l][1].out.clone();
            cat.extend_from_slice(&upsampled);
            dec[l] = Some(run_block(&self.dec[l], p, cat, hl, wl));
        }
        let top = &dec[0].as_ref().unwrap()[1].out;
        let logits = pointwise_forward(self.head_w.of(p), self.head_b.of(p), top, self.base, N_CLASSES, h * w);
        (logits, UNetCache { h, w, enc, pools, dec })
    }

    /// Accumulates parameter gradients for `dlogits` into `g`.
    pub(crate) fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &UNetCache<T>, dlogits: &[T]) {
        let (h, w) = (cache.h, cache.w);
        let dec = |l: usize| cache.dec[l].as_ref().unwrap();
        let (head_w, head_b) = pair_mut(g, self.head_w, self.head_b);
        let mut d = pointwise_backward(
            self.head_w.of(p),
            &dec(0)[1].out,
            self.base,
            N_CLASSES,
            h * w,
            dlogits,
            head_w,
            head_b,
        );
        let mut skip_grads = Vec::with_capacity(self.depth - 1);
        for l in 0..self.depth - 1 {
            let (hl, wl) = (h >> l, w >> l);
            let dcat = block_backward(&self.dec[l], p, g, dec(l), d, hl, wl, true).unwrap();
            let c = self.dec[l][1].cout;
            let (dskip, dup) = dcat.split_at(c * hl * wl);
            skip_grads.push(dskip.to_vec());
            let up = &self.ups[l];
            let below = if l + 2 < self.depth {
                &dec(l + 1)[1].out
            } else {
                &enc_out(cache, l + 1)[..]
            };
            let (dw, db) = pair_mut(g, up.w, up.b);
            d = upconv_backward(up.w.of(p), below, up.cin, up.cout, hl >> 1, wl >> 1, dup, dw, db);
        }
        for l in (0..self.depth).rev() {
            let (hl, wl) = (h >> l, w >> l);
            let need_dx = l > 0;
            let dx = block_backward(&self.enc[l], p, g, &cache.enc[l], d, hl, wl, need_dx);
            if let Some(dx) = dx {
                let (hu, wu) = (h >> (l - 1), w >> (l - 1));
                let c = self.enc[l - 1][1].cout;
                let mut dprev = std::mem::take(&mut skip_grads[l - 1]);
                debug_assert_eq!(dprev.len(), c * hu * wu);
                maxpool_backward(&dx, &cache.pools[l - 1], &mut dprev);
                d = dprev;
            } else {
                d = Vec::new();
            }
        }
    }
}

fn enc_out<T: Scalar>(cache: &UNetCache<T>, l: usize) -> &Vec<T> {
    &cache.enc[l][1].out
}

/// Slice classifier: `blocks` conv units each followed by 2×2 max pooling,
/// channels doubling from `base`, global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct ClassifierNet {
    pub blocks: usize,
    pub base: usize,
    layout: Layout,
    units: Vec<ConvUnit>,
    fc_w: Range,
    fc_b: Range,
}

pub(crate) struct ClassifierCache<T> {
    h: usize,
    w: usize,
    units: Vec<UnitCache<T>>,
    pools: Vec<Vec<u32>>,
    pooled: Vec<T>,
}

impl ClassifierNet {
    pub fn new(blocks: usize, base: usize) -> Self {
        let mut layout = Layout::default();
        let mut units = Vec::new();
        let mut cin = 1;
        for b in 0..blocks {
            let cout = base << b;
            units.push(ConvUnit::new(&mut layout, &format!("block{b}"), cin, cout));
            cin = cout;
        }
        let fc_w = layout.add("fc.weight".into(), vec![N_CLASSES, cin]);
        let fc_b = layout.add("fc.bias".into(), vec![N_CLASSES]);
        Self {
            blocks,
            base,
            layout,
            units,
            fc_w,
            fc_b,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        init_params(&self.layout, rng)
    }

    fn features(&self) -> usize {
        self.base << (self.blocks - 1)
    }

    pub(crate) fn forward<T: Scalar>(&self, p: &[T], image: &[T], h: usize, w: usize) -> (Vec<T>, ClassifierCache<T>) {
        let mut units = Vec::with_capacity(self.blocks);
        let mut pools = Vec::with_capacity(self.blocks);
        let mut x = image.to_vec();
        for (b, unit) in self.units.iter().enumerate() {
            let (hb, wb) = (h >> b, w >> b);
            let cache = unit.forward(p, x, hb, wb);
            let (pooled, arg) = maxpool_forward(&cache.out, unit.cout, hb, wb);
            x = pooled;
            units.push(cache);
            pools.push(arg);
        }
        let c = self.features();
        let hw = (h >> self.blocks) * (w >> self.blocks);
        let inv = T::of(1.0 / hw as f64);
        let pooled: Vec<T> = x.chunks(hw).map(|plane| plane.iter().copied().sum::<T>() * inv).collect();
        let mut logits = self.fc_b.of(p).to_vec();
        matmul(N_CLASSES, c, 1, self.fc_w.of(p), false, &pooled, false, &mut logits, true);
        (logits, ClassifierCache { h, w, units, pools, pooled })
    }

    pub(crate) fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &ClassifierCache<T>, dlogits: &[T]) {
        let c = self.features();
        add_into(self.fc_b.of_mut(g), dlogits);
        matmul(N_CLASSES, 1, c, dlogits, false, &cache.pooled, false, self.fc_w.of_mut(g), true);
        let mut dpooled = vec![T::zero(); c];
        matmul(c, N_CLASSES, 1, self.fc_w.of(p), true, dlogits, false, &mut dpooled, false);
        let (h, w) = (cache.h, cache.w);
        let hw = (h >> self.blocks) * (w >> self.blocks);
        let inv = T::of(1.0 / hw as f64);
        let mut d: Vec<T> = dpooled.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect();
        for b in (0..self.blocks).rev() {
            let (hb, wb) = (h >> b, w >> b);
            let unit = &self.units[b];
            let mut dout = vec![T::zero(); unit.cout * hb * wb];
            maxpool_backward(&d, &cache.pools[b], &mut dout);
            d = match unit.backward(p, g, &cache.units[b], dout, hb, wb, b > 0) {
                Some(dx) => dx,
                None => Vec::new(),
            };
        }
    }
}

/// He-normal weights for the leaky-ReLU slope, unit norm scales, zero biases.
fn init_params<T: Scalar, R: Rng>(layout: &Layout, rng: &mut R) -> Vec<T> {
    let mut p = Vec::with_capacity(layout.total);
    let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
    for spec in &layout.specs {
        let n = spec.len();
        if spec.name.ends_with(".bias") {
            p.extend(std::iter::repeat_n(T::zero(), n));
        } else if spec.name.ends_with("norm.weight") {
            p.extend(std::iter::repeat_n(T::one(), n));
        } else {
            // fan-in: input channels times kernel taps feeding one output
            let fan_in = if spec.name.starts_with("up") {
                spec.shape[3]
            } else {
                spec.shape[1..].iter().product()
            };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            p.extend((0..n).map(|_| T::of(normal.sample(rng))));
        }
    }
    p
}
