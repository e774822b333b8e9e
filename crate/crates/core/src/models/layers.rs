//! Forward and backward passes of the network building blocks.
//!
//! Activations are single-sample, channel-major `c × h × w` buffers.
//! Parameter gradients are accumulated into caller-provided slices.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar};

pub(crate) const LEAKY_SLOPE: f64 = 0.01;
pub(crate) const NORM_EPS: f64 = 1e-5;

/// Name and shape of one parameter tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered tensor table; tensors are stored back to back.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Layout {
    pub specs: Vec<TensorSpec>,
    pub offsets: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Range {
    pub off: usize,
    pub len: usize,
}

impl Range {
    pub fn of<'a, T>(&self, v: &'a [T]) -> &'a [T] {
        &v[self.off..self.off + self.len]
    }

    pub fn of_mut<'a, T>(&self, v: &'a mut [T]) -> &'a mut [T] {
        &mut v[self.off..self.off + self.len]
    }
}

/// Disjoint mutable views of two ranges, `a` before `b`.
pub(crate) fn pair_mut<T>(v: &mut [T], a: Range, b: Range) -> (&mut [T], &mut [T]) {
    assert!(a.off + a.len <= b.off);
    let (lo, hi) = v.split_at_mut(b.off);
    (&mut lo[a.off..a.off + a.len], &mut hi[..b.len])
}

impl Layout {
    pub fn add(&mut self, name: String, shape: Vec<usize>) -> Range {
        let spec = TensorSpec { name, shape };
        let r = Range {
            off: self.total,
            len: spec.len(),
        };
        self.offsets.push(self.total);
        self.total += r.len;
        self.specs.push(spec);
        r
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d = *d + *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d = *d + *s),
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, zero padding 1, no bias. Weight shape `[cout, cin, 3, 3]`.
pub(crate) fn conv3x3_forward<T: Scalar>(wt: &[T], x: &[T], cin: usize, cout: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * 9 * hw];
    im2col(x, cin, h, w, &mut cols);
    let mut y = vec![T::zero(); cout * hw];
    matmul(cout, cin * 9, hw, wt, false, &cols, false, &mut y, false);
    y
}

/// Accumulates the weight gradient and returns the input gradient when
/// `need_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<T: Scalar>(
    wt: &[T],
    x: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    dy: &[T],
    dwt: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    let k = cin * 9;
    let mut cols = vec![T::zero(); k * hw];
    im2col(x, cin, h, w, &mut cols);
    matmul(cout, hw, k, dy, false, &cols, true, dwt, true);
    if !need_dx {
        return None;
    }
    matmul(k, cout, hw, wt, true, dy, false, &mut cols, false);
    let mut dx = vec![T::zero(); cin * hw];
    col2im(&cols, cin, h, w, &mut dx);
    Some(dx)
}

pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Instance normalization with per-channel affine parameters, in place.
pub(crate) fn instnorm_forward<T: Scalar>(gamma: &[T], beta: &[T], x: &mut [T], c: usize, hw: usize) -> NormCache<T> {
    let mut xhat = vec![T::zero(); c * hw];
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        let n = hw as f64;
        let mean = plane.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = plane.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        let (m, is_t) = (T::of(mean), T::of(is));
        let (g, b) = (gamma[ch], beta[ch]);
        for (xh, v) in xhat[ch * hw..(ch + 1) * hw].iter_mut().zip(plane.iter_mut()) {
            *xh = (*v - m) * is_t;
            *v = g * *xh + b;
        }
        inv_std.push(is_t);
    }
    NormCache { xhat, inv_std }
}

/// Input gradient of instance normalization, in place over `dy`.
pub(crate) fn instnorm_backward<T: Scalar>(
    gamma: &[T],
    cache: &NormCache<T>,
    dy: &mut [T],
    c: usize,
    hw: usize,
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let n = hw as f64;
    for ch in 0..c {
        let d = &mut dy[ch * hw..(ch + 1) * hw];
        let xh = &cache.xhat[ch * hw..(ch + 1) * hw];
        let sum_d: f64 = d.iter().map(|v| v.f64()).sum();
        let sum_dx: f64 = d.iter().zip(xh).map(|(a, b)| a.f64() * b.f64()).sum();
        dgamma[ch] = dgamma[ch] + T::of(sum_dx);
        dbeta[ch] = dbeta[ch] + T::of(sum_d);
        let g = gamma[ch].f64();
        let scale = T::of(cache.inv_std[ch].f64() / n);
        let (sd, sdx) = (T::of(g * sum_d), T::of(g * sum_dx));
        let nn = T::of(n);
        let gt = gamma[ch];
        for (v, &x) in d.iter_mut().zip(xh) {
            *v = scale * (nn * gt * *v - sd - x * sdx);
        }
    }
}

pub(crate) fn leaky_relu<T: Scalar>(x: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for v in x {
        if *v < T::zero() {
            *v = *v * s;
        }
    }
}

/// Gradient through a leaky ReLU given its output, in place.
pub(crate) fn leaky_relu_backward<T: Scalar>(out: &[T], d: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for (g, &o) in d.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = *g * s;
        }
    }
}

/// 2×2 max pooling of even-sized planes; returns the output and the source
/// index of each maximum.
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Scalar>(dy: &[T], arg: &[u32], dx: &mut [T]) {
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + g;
    }
}

/// 2×2 stride-2 transposed convolution. Weight shape `[cout, 2, 2, cin]`,
/// bias `[cout]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn upconv_forward<T: Scalar>(
    wt: &[T],
    bias: &[T],
    x: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut tmp = vec![T::zero(); cout * 4 * hw];
    matmul(cout * 4, cin, hw, wt, false, x, false, &mut tmp, false);
    let ow = 2 * w;
    let mut y = vec![T::zero(); cout * 4 * hw];
    for co in 0..cout {
        for dy in 0..2 {
            for dx in 0..2 {
                let src = &tmp[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        y[co * 4 * hw + (2 * i + dy) * ow + 2 * j + dx] = src[i * w + j] + bias[co];
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn upconv_backward<T: Scalar>(
    wt: &[T],
    x: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    dy_full: &[T],
    dwt: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let hw = h * w;
    let ow = 2 * w;
    let mut dtmp = vec![T::zero(); cout * 4 * hw];
    for co in 0..cout {
        let plane = &dy_full[co * 4 * hw..(co + 1) * 4 * hw];
        dbias[co] = dbias[co] + plane.iter().copied().sum();
        for dy in 0..2 {
            for dx in 0..2 {
                let dst = &mut dtmp[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = plane[(2 * i + dy) * ow + 2 * j + dx];
                    }
                }
            }
        }
    }
    matmul(cout * 4, hw, cin, &dtmp, false, x, true, dwt, true);
    let mut dxv = vec![T::zero(); cin * hw];
    matmul(cin, cout * 4, hw, wt, true, &dtmp, false, &mut dxv, false);
    dxv
}

/// 1×1 convolution with bias. Weight shape `[cout, cin]`.
pub(crate) fn pointwise_forward<T: Scalar>(wt: &[T], bias: &[T], x: &[T], cin: usize, cout: usize, hw: usize) -> Vec<T> {
    let mut y = vec![T::zero(); cout * hw];
    for (co, plane) in y.chunks_mut(hw.max(1)).enumerate().take(cout) {
        plane.fill(bias[co]);
    }
    matmul(cout, cin, hw, wt, false, x, false, &mut y, true);
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pointwise_backward<T: Scalar>(
    wt: &[T],
    x: &[T],
    cin: usize,
    cout: usize,
    hw: usize,
    dy: &[T],
    dwt: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    for co in 0..cout {
        dbias[co] = dbias[co] + dy[co * hw..(co + 1) * hw].iter().copied().sum();
    }
    matmul(cout, hw, cin, dy, false, x, true, dwt, true);
    let mut dx = vec![T::zero(); cin * hw];
    matmul(cin, cout, hw, wt, true, dy, false, &mut dx, false);
    dx
}

/// conv3x3 → instance norm → leaky ReLU.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvUnit {
    pub w: Range,
    pub gamma: Range,
    pub beta: Range,
    pub cin: usize,
    pub cout: usize,
}

pub(crate) struct UnitCache<T> {
    pub input: Vec<T>,
    pub norm: NormCache<T>,
    pub out: Vec<T>,
}

impl ConvUnit {
    pub fn new(layout: &mut Layout, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            w: layout.add(format!("{name}.conv.weight"), vec![cout, cin, 3, 3]),
            gamma: layout.add(format!("{name}.norm.weight"), vec![cout]),
            beta: layout.add(format!("{name}.norm.bias"), vec![cout]),
            cin,
            cout,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], input: Vec<T>, h: usize, w: usize) -> UnitCache<T> {
        let mut out = conv3x3_forward(self.w.of(p), &input, self.cin, self.cout, h, w);
        let norm = instnorm_forward(self.gamma.of(p), self.beta.of(p), &mut out, self.cout, h * w);
        leaky_relu(&mut out);
        UnitCache { input, norm, out }
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        cache: &UnitCache<T>,
        mut d: Vec<T>,
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        leaky_relu_backward(&cache.out, &mut d);
        let (mut dg, mut db) = (vec![T::zero(); self.cout], vec![T::zero(); self.cout]);
        instnorm_backward(self.gamma.of(p), &cache.norm, &mut d, self.cout, h * w, &mut dg, &mut db);
        add_into(self.gamma.of_mut(g), &dg);
        add_into(self.beta.of_mut(g), &db);
        conv3x3_backward(self.w.of(p), &cache.input, self.cin, self.cout, h, w, &d, self.w.of_mut(g), need_dx)
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(wt: &[f64], x: &[f64], cin: usize, cout: usize, h: usize, w: usize) -> Vec<f64> {
        let mut y = vec![0.0; cout * h * w];
        for co in 0..cout {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (si, sj) = (i + ky - 1, j + kx - 1);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                acc += wt[((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * x[(ci * h + si as usize) * w + sj as usize];
                            }
                        }
                    }
                    y[(co * h + i as usize) * w + j as usize] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (cin, cout, h, w) = (3, 2, 5, 6);
        let wt: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.31).sin()).collect();
        let y = conv3x3_forward(&wt, &x, cin, cout, h, w);
        for (a, b) in y.iter().zip(naive_conv(&wt, &x, cin, cout, h, w)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upconv_places_each_tap() {
        // single input pixel, identity-like weights
        let (cin, cout) = (1, 1);
        let wt = vec![1.0, 2.0, 3.0, 4.0];
        let y = upconv_forward(&wt, &[0.5], &[2.0], cin, cout, 1, 1);
        assert_eq!(y, vec![2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn maxpool_routes_gradient() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0];
        let (out, arg) = maxpool_forward(&x, 1, 2, 4);
        assert_eq!(out, vec![5.0, 9.0]);
        let mut dx = vec![0.0; 8];
        maxpool_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
