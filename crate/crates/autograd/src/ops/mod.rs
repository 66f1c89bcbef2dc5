//! Differentiable operations, implemented as methods on [`Var`](crate::Var).

mod conv;
mod elementwise;
mod reduce;
mod shape;

pub use conv::ConvGeometry;

use crate::graph::Var;

impl Var {
    /// Log-softmax over the channel axis, independently at every `(n, h, w)`.
    pub fn log_softmax_channels(&self) -> Var {
        let [n, _, h, w] = self.shape();
        let reduced = [n, 1, h, w];
        // The shift is a constant: log-softmax is invariant to it, so
        // gradients stay exact while exp() cannot overflow.
        let shift = channel_max(self);
        let z = self.sub_bcast(&shift);
        let lse = z.exp().sum_to(reduced).ln();
        z.sub_bcast(&lse)
    }
}

fn channel_max(x: &Var) -> Var {
    let [n, c, h, w] = x.shape();
    let t = x.value();
    let m = crate::Tensor::from_fn([n, 1, h, w], |[ni, _, hi, wi]| {
        (0..c).map(|ci| t.get([ni, ci, hi, wi])).fold(f64::NEG_INFINITY, f64::max)
    });
    Var::constant(m)
}

macro_rules! binary_trait {
    ($trait:ident, $method:ident, $impl:ident) => {
        impl std::ops::$trait<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                Var::$impl(&self, &rhs)
            }
        }
        impl<'a> std::ops::$trait<&'a Var> for &'a Var {
            type Output = Var;
            fn $method(self, rhs: &'a Var) -> Var {
                Var::$impl(self, rhs)
            }
        }
    };
}

binary_trait!(Add, add, add);
binary_trait!(Sub, sub, sub);
binary_trait!(Mul, mul, mul);

impl std::ops::Mul<f64> for Var {
    type Output = Var;
    fn mul(self, k: f64) -> Var {
        self.scale(k)
    }
}

impl std::ops::Mul<f64> for &Var {
    type Output = Var;
    fn mul(self, k: f64) -> Var {
        self.scale(k)
    }
}

impl std::ops::Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(&self)
    }
}
