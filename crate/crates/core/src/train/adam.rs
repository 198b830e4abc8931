//! Adam with per-group moments and learning-rate schedules.

use log::warn;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_GAUSSIAN: f64 = 1e-15;
pub const EPS_NETWORK: f64 = 1e-8;

/// Moments of one parameter group. Rows of `width` values let Gaussian
/// groups follow densification and pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub width: usize,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps skipped because the gradient was not finite.
    pub skipped: u64,
}

impl AdamGroup {
    pub fn new(name: &str, width: usize, len: usize, eps: f64) -> Self {
        Self {
            name: name.to_string(),
            width,
            eps,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Bias-corrected Adam update. Returns `false` and leaves everything
    /// untouched when any gradient entry is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam group {}: {} params, {} grads, {} moments",
                self.name,
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            warn!("adam group {}: non-finite gradient, step skipped ({} so far)", self.name, self.skipped);
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2_sqrt = (1.0 - BETA2.powi(t)).sqrt();
        let step_size = lr / bc1;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let denom = self.v[i].sqrt() / bc2_sqrt + self.eps;
            params[i] -= step_size * self.m[i] / denom;
        }
        Ok(true)
    }

    /// Rebuilds the moments after the rows were rearranged: row `k` of the
    /// result copies old row `src[k]`, or starts at zero for `None`.
    pub fn remap_rows(&mut self, src: &[Option<usize>]) {
        let w = self.width;
        let mut m = vec![0.0; src.len() * w];
        let mut v = vec![0.0; src.len() * w];
        for (k, s) in src.iter().enumerate() {
            if let Some(i) = s {
                m[k * w..(k + 1) * w].copy_from_slice(&self.m[i * w..(i + 1) * w]);
                v[k * w..(k + 1) * w].copy_from_slice(&self.v[i * w..(i + 1) * w]);
            }
        }
        self.m = m;
        self.v = v;
    }

    /// Zeroes the moments of every row.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// `start * (end / start)^(i / total)`, clamped to the end value past
/// `total`.
pub fn exp_lr(start: f64, end: f64, iteration: u64, total: u64) -> f64 {
    if total == 0 {
        return start;
    }
    let t = (iteration as f64 / total as f64).min(1.0);
    if t == 1.0 {
        return end;
    }
    start * (end / start).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut g = AdamGroup::new("p", 1, 3, EPS_GAUSSIAN);
        let mut p = [1.0, -2.0, 3.0];
        g.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut g = AdamGroup::new("p", 1, 1, EPS_NETWORK);
        let mut p = [0.0];
        g.step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn non_finite_gradient_skips_group() {
        let mut g = AdamGroup::new("p", 1, 2, EPS_NETWORK);
        let mut p = [1.0, 1.0];
        assert!(!g.step(&mut p, &[f64::NAN, 1.0], 0.1).unwrap());
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!((g.step, g.skipped), (0, 1));
    }

    #[test]
    fn remap_keeps_and_zeroes_rows() {
        let mut g = AdamGroup::new("p", 2, 4, EPS_NETWORK);
        let mut p = [0.0; 4];
        g.step(&mut p, &[1.0, 2.0, 3.0, 4.0], 0.1).unwrap();
        let old = g.clone();
        g.remap_rows(&[Some(1), None, Some(0)]);
        assert_eq!(g.m[0..2], old.m[2..4]);
        assert_eq!(g.m[2..4], [0.0, 0.0]);
        assert_eq!(g.v[4..6], old.v[0..2]);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(exp_lr(8e-4, 1.6e-6, 0, 30_000), 8e-4);
        assert_eq!(exp_lr(8e-4, 1.6e-6, 30_000, 30_000), 1.6e-6);
        assert!((exp_lr(8e-4, 1.6e-6, 15_000, 30_000) - 3.5777e-5).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for i in (0..=30_000).step_by(1000) {
            let lr = exp_lr(8e-4, 1.6e-6, i, 30_000);
            assert!(lr < prev);
            prev = lr;
        }
    }
}
