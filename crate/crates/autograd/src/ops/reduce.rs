//! Summation over axes and its adjoint, broadcasting along size-1 axes.

use crate::graph::Var;
use crate::tensor::{Shape, Tensor};

fn reducible(from: Shape, to: Shape) -> bool {
    from.iter().zip(to.iter()).all(|(&f, &t)| t == f || t == 1)
}

fn sum_to_tensor(x: &Tensor, to: Shape) -> Tensor {
    let from = x.shape();
    if from == to {
        return x.clone();
    }
    let mut out = Tensor::zeros(to);
    let [n, c, h, w] = from;
    let pick = |i: usize, axis: usize| if to[axis] == 1 { 0 } else { i };
    let src = x.data();
    let dst = out.data_mut();
    let mut k = 0;
    for ni in 0..n {
        let on = pick(ni, 0);
        for ci in 0..c {
            let oc = pick(ci, 1);
            for hi in 0..h {
                let oh = pick(hi, 2);
                let row = ((on * to[1] + oc) * to[2] + oh) * to[3];
                if to[3] == 1 {
                    let s: f64 = src[k..k + w].iter().sum();
                    dst[row] += s;
                } else {
                    for (d, s) in dst[row..row + w].iter_mut().zip(&src[k..k + w]) {
                        *d += s;
                    }
                }
                k += w;
            }
        }
    }
    out
}

fn expand_tensor(x: &Tensor, to: Shape) -> Tensor {
    let from = x.shape();
    if from == to {
        return x.clone();
    }
    let pick = |i: usize, axis: usize| if from[axis] == 1 { 0 } else { i };
    let src = x.data();
    let [n, c, h, w] = to;
    let mut data = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        let sn = pick(ni, 0);
        for ci in 0..c {
            let sc = pick(ci, 1);
            for hi in 0..h {
                let sh = pick(hi, 2);
                let row = ((sn * from[1] + sc) * from[2] + sh) * from[3];
                if from[3] == 1 {
                    data.extend(std::iter::repeat(src[row]).take(w));
                } else {
                    data.extend_from_slice(&src[row..row + w]);
                }
            }
        }
    }
    Tensor::new(to, data).expect("expand shape")
}

impl Var {
    /// Sums over every axis where `shape` has size 1.
    pub fn sum_to(&self, shape: Shape) -> Var {
        let from = self.shape();
        assert!(reducible(from, shape), "sum_to: cannot reduce {from:?} to {shape:?}");
        Var::from_op(
            "sum_to",
            sum_to_tensor(self.value(), shape),
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.expand_to(from))]),
        )
    }

    /// Broadcasts size-1 axes up to `shape`.
    pub fn expand_to(&self, shape: Shape) -> Var {
        let from = self.shape();
        assert!(reducible(shape, from), "expand_to: cannot expand {from:?} to {shape:?}");
        Var::from_op(
            "expand_to",
            expand_tensor(self.value(), shape),
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.sum_to(from))]),
        )
    }

    /// Sum of all elements as a `[1, 1, 1, 1]` var.
    pub fn sum(&self) -> Var {
        self.sum_to([1, 1, 1, 1])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over the axes where `shape` has size 1.
    pub fn mean_to(&self, shape: Shape) -> Var {
        let count = self.value().numel() / crate::tensor::numel(shape);
        self.sum_to(shape).scale(1.0 / count as f64)
    }

    /// `self + other`, broadcasting `other` over its size-1 axes.
    pub fn add_bcast(&self, other: &Var) -> Var {
        self.add(&other.expand_to(self.shape()))
    }

    pub fn sub_bcast(&self, other: &Var) -> Var {
        self.sub(&other.expand_to(self.shape()))
    }

    pub fn mul_bcast(&self, other: &Var) -> Var {
        self.mul(&other.expand_to(self.shape()))
    }
}
