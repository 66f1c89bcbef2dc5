//! Adam optimizer over named parameters.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with bias correction. Moments are keyed by parameter name so the
/// state can be saved and restored independently of parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    /// Starts a new step; call once before [`Adam::update`] on each parameter.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Returns the updated value of parameter `name`.
    pub fn update(&mut self, name: &str, param: &Tensor, grad: &Tensor) -> Tensor {
        assert!(self.step > 0, "begin_step() must precede update()");
        assert_eq!(param.shape(), grad.shape(), "grad shape mismatch for {name}");
        let (b1, b2) = (self.beta1, self.beta2);
        let entry = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        });
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut out = param.clone();
        let m = entry.m.data_mut();
        let v = entry.v.data_mut();
        for (((p, &g), mi), vi) in out.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::new(0.1, 0.5, 0.9);
        adam.begin_step();
        let p = Tensor::new([1, 1, 1, 2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new([1, 1, 1, 2], vec![3.0, -0.5]).unwrap();
        let out = adam.update("w", &p, &g);
        assert!((out.data()[0] - 0.9).abs() < 1e-7);
        assert!((out.data()[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut adam = Adam::new(0.0, 0.5, 0.9);
        adam.begin_step();
        let p = Tensor::new([1, 1, 1, 2], vec![0.3, 0.7]).unwrap();
        let g = Tensor::full([1, 1, 1, 2], 2.0);
        assert_eq!(adam.update("w", &p, &g), p);
    }
}
