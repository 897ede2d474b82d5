use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - pow(self.beta2, self.step as f64);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= self.lr * (*m / bc1) / (sqrt(*v / bc2) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr · sign(g).
        let mut opt = Adam::new(2, 0.01, 0.9, 0.999, 0.0);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-12);
        assert!((p[1] + 0.99).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(1, 0.05, 0.9, 0.999, 1e-8);
        let mut p = [3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
