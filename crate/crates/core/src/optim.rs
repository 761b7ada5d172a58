//! Adam with bias correction, shared by both renderers.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Scalar types Adam can update in place.
pub trait Param: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Param for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Param for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// First and second moment estimates for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` against `grads` with learning rate `lr`.
    ///
    /// # Panics
    /// If the lengths disagree with the optimizer state.
    pub fn step<P: Param>(&mut self, params: &mut [P], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = P::from_f64(p.to_f64() - lr * m_hat / (v_hat.sqrt() + epsilon));
        }
    }

    /// Rebuilds the moment buffers after the parameter set changed shape.
    /// `origin[i]` names the old row that new row `i` continues, or `None`
    /// for a freshly created row (zero moments). Rows are `stride` wide.
    pub fn remap(&mut self, origin: &[Option<usize>], stride: usize) {
        let gather = |old: &[f64]| {
            let mut out = Vec::with_capacity(origin.len() * stride);
            for o in origin {
                match o {
                    Some(i) => out.extend_from_slice(&old[i * stride..(i + 1) * stride]),
                    None => out.extend(std::iter::repeat_n(0.0, stride)),
                }
            }
            out
        };
        self.m = gather(&self.m);
        self.v = gather(&self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = [1.0f64, -2.0];
        adam.step(&mut p, &[0.5, -4.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let target = [0.3f64, -1.2, 2.5];
        let mut p = [0.0f32; 3];
        for _ in 0..3000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (*x as f64 - t)).collect();
            adam.step(&mut p, &g, 0.01);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((*x as f64 - t).abs() < 1e-3);
        }
    }

    #[test]
    fn remap_keeps_continuing_rows_and_zeroes_new_ones() {
        let mut adam = Adam::new(4, AdamConfig::default());
        let mut p = [0.0f64; 4];
        adam.step(&mut p, &[1.0, 2.0, 3.0, 4.0], 0.1);
        adam.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(adam.len(), 6);
        assert!((adam.m[0] - 0.3).abs() < 1e-12 && (adam.m[1] - 0.4).abs() < 1e-12);
        assert_eq!(&adam.m[2..4], &[0.0, 0.0]);
        assert!((adam.m[4] - 0.1).abs() < 1e-12);
    }
}
