//! Adam and plain gradient descent over lists of parameter tensors, with
//! elementwise clamping of gradients to an l-infinity bound before the
//! moment updates.

use crate::autodiff::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Adam::new(lr, &sizes)
    }

    /// One update over all parameter slots. `clip` clamps each gradient
    /// coordinate to [-clip, clip] first.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], clip: Option<f64>) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.numel() {
                let mut gi = g.data[i];
                if let Some(c) = clip {
                    gi = gi.clamp(-c, c);
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Single-slot convenience (the cost search optimizes one vector).
    pub fn step_single(&mut self, param: &mut Tensor, grad: &Tensor, slot: usize, clip: Option<f64>) {
        assert_eq!(self.m.len(), 1, "step_single expects a single-slot optimizer");
        let _ = slot;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let m = &mut self.m[0];
        let v = &mut self.v[0];
        for i in 0..param.numel() {
            let mut gi = grad.data[i];
            if let Some(c) = clip {
                gi = gi.clamp(-c, c);
            }
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
            p_update(param, i, self.lr, m[i] / bc1, v[i] / bc2, self.eps);
        }
    }
}

fn p_update(p: &mut Tensor, i: usize, lr: f64, mhat: f64, vhat: f64, eps: f64) {
    p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
}

/// Plain gradient descent, for the full-batch sanity mode.
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut [&mut Tensor], grads: &[Tensor], clip: Option<f64>) {
        for (p, g) in params.iter_mut().zip(grads) {
            for i in 0..p.numel() {
                let mut gi = g.data[i];
                if let Some(c) = clip {
                    gi = gi.clamp(-c, c);
                }
                p.data[i] -= self.lr * gi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // f(x) = (x - 3)^2
        let mut x = Tensor::vector(vec![0.0]);
        let mut opt = Adam::new(0.1, &[1]);
        for _ in 0..300 {
            let g = Tensor::vector(vec![2.0 * (x.data[0] - 3.0)]);
            let mut refs = [&mut x];
            opt.step(&mut refs, &[g], None);
        }
        assert!((x.data[0] - 3.0).abs() < 1e-3, "{}", x.data[0]);
    }

    #[test]
    fn clip_bounds_the_applied_gradient() {
        let mut x = Tensor::vector(vec![0.0]);
        let sgd = Sgd { lr: 1.0 };
        let g = Tensor::vector(vec![100.0]);
        let mut refs = [&mut x];
        sgd.step(&mut refs, &[g], Some(0.01));
        assert!((x.data[0] + 0.01).abs() < 1e-12);
    }
}
