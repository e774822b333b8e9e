//! Input preprocessing and training-time augmentation.

use rand::Rng;

use crate::domain::Grid;

pub const MAX_ROTATION_DEG: f64 = 10.0;

/// Per-slice z-score normalization; constant slices map to zeros.
pub fn zscore(pixels: &[f32]) -> Vec<f32> {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = pixels.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-8 {
        return vec![0.0; pixels.len()];
    }
    pixels.iter().map(|&v| ((f64::from(v) - mean) / sd) as f32).collect()
}

fn sample_clamped(src: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| f64::from(src[r * w + c]);
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(src: &Grid<f32>, out_h: usize, out_w: usize) -> Vec<f32> {
    let (h, w) = src.shape();
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let y = (r as f64 + 0.5) * sy - 0.5;
            let x = (c as f64 + 0.5) * sx - 0.5;
            out.push(sample_clamped(src.as_slice(), h, w, y, x));
        }
    }
    out
}

/// Zero-pads `c × h × w` data on the bottom and right up to multiples of `m`.
pub fn pad_to_multiple<T: Copy>(x: &[T], c: usize, h: usize, w: usize, m: usize, fill: T) -> (Vec<T>, usize, usize) {
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return (x.to_vec(), h, w);
    }
    let mut out = vec![fill; c * ph * pw];
    for ch in 0..c {
        for r in 0..h {
            let src = &x[(ch * h + r) * w..][..w];
            out[(ch * ph + r) * pw..][..w].copy_from_slice(src);
        }
    }
    (out, ph, pw)
}

/// Crops `c × ph × pw` data back to `h × w`.
pub fn crop<T: Copy>(x: &[T], c: usize, ph: usize, pw: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for r in 0..h {
            out.extend_from_slice(&x[(ch * ph + r) * pw..][..w]);
        }
    }
    out
}

/// A random flip/rotation applied identically to an image and its mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip_rows: bool,
    pub flip_cols: bool,
    pub angle_rad: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip_rows: false,
        flip_cols: false,
        angle_rad: 0.0,
    };

    /// Each flip with probability 1/2; a rotation uniform in ±10° with
    /// probability 1/2.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let flip_rows = rng.random_bool(0.5);
        let flip_cols = rng.random_bool(0.5);
        let rotate = rng.random_bool(0.5);
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        Self {
            flip_rows,
            flip_cols,
            angle_rad: if rotate { angle.to_radians() } else { 0.0 },
        }
    }

    /// Source coordinate of output pixel (r, c).
    fn source(&self, h: usize, w: usize, r: usize, c: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let (s, co) = self.angle_rad.sin_cos();
        let mut y = cy + co * dy - s * dx;
        let mut x = cx + s * dy + co * dx;
        if self.flip_rows {
            y = 2.0 * cy - y;
        }
        if self.flip_cols {
            x = 2.0 * cx - x;
        }
        (y, x)
    }

    pub fn apply_image(&self, src: &[f32], h: usize, w: usize) -> Vec<f32> {
        if *self == Self::IDENTITY {
            return src.to_vec();
        }
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (y, x) = self.source(h, w, r, c);
                out.push(sample_clamped(src, h, w, y, x));
            }
        }
        out
    }

    /// Nearest-neighbour resampling of a label mask.
    pub fn apply_mask(&self, src: &[u8], h: usize, w: usize) -> Vec<u8> {
        if *self == Self::IDENTITY {
            return src.to_vec();
        }
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (y, x) = self.source(h, w, r, c);
                let y = (y.round().clamp(0.0, (h - 1) as f64)) as usize;
                let x = (x.round().clamp(0.0, (w - 1) as f64)) as usize;
                out.push(src[y * w + x]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_moments() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0]);
        let m: f32 = z.iter().sum::<f32>() / 4.0;
        let v: f32 = z.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / 4.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-5);
        assert_eq!(zscore(&[3.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn flips_are_exact() {
        let img: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let aug = Augmentation { flip_rows: false, flip_cols: true, angle_rad: 0.0 };
        assert_eq!(aug.apply_image(&img, 3, 4)[..4], [3.0, 2.0, 1.0, 0.0]);
        let mask: Vec<u8> = (0..12).collect();
        let aug = Augmentation { flip_rows: true, flip_cols: false, angle_rad: 0.0 };
        assert_eq!(aug.apply_mask(&mask, 3, 4)[..4], [8, 9, 10, 11]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let g = Grid::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&g, 2, 3), g.as_slice());
        let c = Grid::filled(5, 7, 0.25f32);
        assert!(resize_bilinear(&c, 64, 64).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn pad_then_crop() {
        let x: Vec<u8> = (0..2 * 3 * 5).map(|v| v as u8).collect();
        let (p, ph, pw) = pad_to_multiple(&x, 2, 3, 5, 4, 0);
        assert_eq!((ph, pw), (4, 8));
        assert_eq!(crop(&p, 2, ph, pw, 3, 5), x);
    }
}
