use crate::graph::Var;
use crate::tensor::Tensor;

fn check_same(op: &str, a: &Var, b: &Var) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        check_same("add", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(
            "add",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|_, g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        check_same("sub", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(
            "sub",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|_, g, needs| vec![Some(g.clone()), needs[1].then(|| g.neg())]),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        check_same("mul", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a * b);
        Var::from_op(
            "mul",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|p, g, needs| {
                vec![needs[0].then(|| g.mul(&p[1])), needs[1].then(|| g.mul(&p[0]))]
            }),
        )
    }

    pub fn div(&self, other: &Var) -> Var {
        check_same("div", self, other);
        let value = self.value().zip_map(other.value(), |a, b| a / b);
        Var::from_op(
            "div",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|p, g, needs| {
                vec![
                    needs[0].then(|| g.div(&p[1])),
                    needs[1].then(|| g.mul(&p[0]).div(&p[1].mul(&p[1])).neg()),
                ]
            }),
        )
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn mul_const(&self, t: &Tensor) -> Var {
        self.mul(&Var::constant(t.clone()))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Var {
        Var::from_op(
            "scale",
            self.value().map(|v| v * k),
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.scale(k))]),
        )
    }

    pub fn add_scalar(&self, k: f64) -> Var {
        Var::from_op(
            "add_scalar",
            self.value().map(|v| v + k),
            vec![self.clone()],
            Box::new(|_, g, _| vec![Some(g.clone())]),
        )
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn exp(&self) -> Var {
        Var::from_op(
            "exp",
            self.value().map(f64::exp),
            vec![self.clone()],
            Box::new(|p, g, _| vec![Some(g.mul(&p[0].exp()))]),
        )
    }

    pub fn ln(&self) -> Var {
        Var::from_op(
            "ln",
            self.value().map(f64::ln),
            vec![self.clone()],
            Box::new(|p, g, _| vec![Some(g.div(&p[0]))]),
        )
    }

    pub fn powf(&self, e: f64) -> Var {
        Var::from_op(
            "powf",
            self.value().map(|v| v.powf(e)),
            vec![self.clone()],
            Box::new(move |p, g, _| vec![Some(g.mul(&p[0].powf(e - 1.0)).scale(e))]),
        )
    }

    pub fn sqrt(&self) -> Var {
        self.powf(0.5)
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(
            "tanh",
            self.value().map(f64::tanh),
            vec![self.clone()],
            Box::new(|p, g, _| {
                let t = p[0].tanh();
                let d = t.square().neg().add_scalar(1.0);
                vec![Some(g.mul(&d))]
            }),
        )
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(
            "sigmoid",
            self.value().map(sigmoid),
            vec![self.clone()],
            Box::new(|p, g, _| {
                let s = p[0].sigmoid();
                let d = s.mul(&s.neg().add_scalar(1.0));
                vec![Some(g.mul(&d))]
            }),
        )
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&self) -> Var {
        Var::from_op(
            "abs",
            self.value().map(f64::abs),
            vec![self.clone()],
            Box::new(|p, g, _| vec![Some(g.mul_const(&p[0].value().map(sign)))]),
        )
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let value = self.value().map(|v| if v > 0.0 { v } else { slope * v });
        Var::from_op(
            "leaky_relu",
            value,
            vec![self.clone()],
            Box::new(move |p, g, _| {
                let mask = p[0].value().map(|v| if v > 0.0 { 1.0 } else { slope });
                vec![Some(g.mul_const(&mask))]
            }),
        )
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
