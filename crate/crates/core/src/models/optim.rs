use serde::{Deserialize, Serialize};

/// Polynomial decay `lr0 · (1 − epoch/epochs)^power`.
pub fn poly_lr(lr0: f64, epoch: usize, epochs: usize, power: f64) -> f64 {
    lr0 * (1.0 - epoch as f64 / epochs as f64).powf(power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.99,
            weight_decay: 3e-5,
            poly_power: 0.9,
        }
    }
}

/// SGD with Nesterov momentum and L2 weight decay added to the gradient.
pub(crate) struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(cfg: &SgdConfig, n: usize) -> Self {
        Self {
            momentum: cfg.momentum as f32,
            weight_decay: cfg.weight_decay as f32,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        let lr = lr as f32;
        let mu = self.momentum;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = g + self.weight_decay * *p;
            *v = mu * *v + g;
            *p -= lr * (g + mu * *v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr0: 5e-4 }
    }
}

pub(crate) struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f32 = 1e-8;

    pub fn new(cfg: &AdamConfig, n: usize) -> Self {
        Self {
            lr: cfg.lr0,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let step = (self.lr / c1) as f32;
        let c2 = c2.sqrt() as f32;
        let (b1, b2) = (Self::B1 as f32, Self::B2 as f32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() / c2 + Self::EPS);
        }
    }
}

/// Rescales `grads` so its L2 norm is at most `max_norm`; returns the norm.
pub(crate) fn clip_grad_norm(grads: &mut [f32], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule() {
        let epochs = 20;
        let lrs: Vec<f64> = (0..epochs).map(|e| poly_lr(0.01, e, epochs, 0.9)).collect();
        assert_eq!(lrs[0], 0.01);
        assert!(lrs[epochs - 1] > 0.0);
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sgd_minimises_quadratic() {
        let cfg = SgdConfig { momentum: 0.9, weight_decay: 0.0, ..SgdConfig::default() };
        let mut opt = Sgd::new(&cfg, 1);
        let mut x = [5.0f32];
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            opt.step(&mut x, &g, 0.05);
        }
        assert!(x[0].abs() < 1e-3);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut opt = Adam::new(&AdamConfig { lr0: 0.1 }, 2);
        let mut x = [1.0f32, -1.0];
        opt.step(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-6 && (x[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping() {
        let mut g = [3.0f32, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-7);
    }
}
