//! Adam with decoupled weight decay.

use std::collections::HashMap;

use crate::backward::Grads;
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as param ← param − lr·wd·param, outside the moments.
    pub weight_decay: f64,
    step: u64,
    m: HashMap<u64, Vec<f64>>,
    v: HashMap<u64, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `params`. Parameters the loss never touched are
    /// decayed but receive no moment update.
    pub fn step(&mut self, params: &[Tensor], grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params {
            let mut data = p.to_vec();
            match grads.get(p) {
                Some(g) => {
                    assert!(
                        g.iter().all(|v| v.is_finite()),
                        "adam: non-finite gradient for tensor {}",
                        p.id()
                    );
                    let m = self.m.entry(p.id()).or_insert_with(|| vec![0.0; data.len()]);
                    let v = self.v.entry(p.id()).or_insert_with(|| vec![0.0; data.len()]);
                    for i in 0..data.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        data[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps))
                            + self.lr * self.weight_decay * data[i];
                    }
                }
                None => {
                    if self.weight_decay == 0.0 {
                        continue;
                    }
                    for d in data.iter_mut() {
                        *d -= self.lr * self.weight_decay * *d;
                    }
                }
            }
            p.set_data(&data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::backward;

    #[test]
    fn first_step_moves_by_about_lr() {
        // Hand-worked: m̂ = g, v̂ = g² after bias correction at t=1, so the
        // update is lr·g/(|g|+ε) ≈ lr for g=1.
        let p = Tensor::param(&[1], vec![0.0]);
        let loss = p.mul(&Tensor::scalar(1.0)).sum();
        let grads = backward(&loss);
        let mut opt = Adam::new(1e-3, 0.0);
        opt.step(&[p.clone()], &grads);
        let got = p.item();
        assert!((got + 1e-3).abs() < 1e-6, "got {got}, want ≈ -1e-3");
    }

    #[test]
    fn zero_gradient_no_decay_leaves_params_unchanged() {
        let p = Tensor::param(&[3], vec![1.0, -2.0, 3.0]);
        let grads = Grads::default();
        let mut opt = Adam::new(1e-3, 0.0);
        opt.step(&[p.clone()], &grads);
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn decay_only_step_is_exact() {
        let p = Tensor::param(&[1], vec![1.0]);
        let grads = Grads::default();
        let mut opt = Adam::new(1e-3, 5e-4);
        opt.step(&[p.clone()], &grads);
        let got = p.item();
        assert!((got - (1.0 - 5e-7)).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // Independent scalar Adam, written out longhand.
        let g1 = 0.3;
        let g2 = -0.7;
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut x = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [(1, g1), (2, g2)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - f64::powi(b1, t));
            let vhat = v / (1.0 - f64::powi(b2, t));
            x -= lr * mhat / (vhat.sqrt() + eps);
        }

        let p = Tensor::param(&[1], vec![0.5]);
        let mut opt = Adam::new(lr, 0.0);
        for g in [g1, g2] {
            let c = Tensor::scalar(g);
            let loss = p.mul(&c).sum();
            let grads = backward(&loss);
            opt.step(&[p.clone()], &grads);
        }
        assert!((p.item() - x).abs() < 1e-12, "got {}, want {x}", p.item());
    }
}
