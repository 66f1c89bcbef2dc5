//! 2-D convolution (cross-correlation) via im2col + GEMM.
//!
//! The three kernels (forward, input gradient, weight gradient) are each
//! other's adjoints, which closes the set under differentiation:
//!
//! | op                          | d/d first arg                 | d/d second arg             |
//! |-----------------------------|-------------------------------|----------------------------|
//! | `conv2d(x, w)`              | `conv_input_grad(dy, w)`      | `conv_weight_grad(x, dy)`  |
//! | `conv_input_grad(g, w)`     | `conv2d(dz, w)`               | `conv_weight_grad(dz, g)`  |
//! | `conv_weight_grad(x, g)`    | `conv_input_grad(g, dz)`      | `conv2d(x, dz)`            |

use crate::graph::Var;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        Self { stride, pad }
    }

    pub fn out_dim(&self, input: usize, k: usize) -> usize {
        let padded = input + 2 * self.pad;
        assert!(padded >= k, "kernel {k} larger than padded input {padded}");
        (padded - k) / self.stride + 1
    }

    fn trivial(&self, k: usize) -> bool {
        k == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], d: &Dims, geo: ConvGeometry, col: &mut [f64]) {
    let l = d.cols();
    let (s, p) = (geo.stride as isize, geo.pad as isize);
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((ci * d.k + ky) * d.k + kx) * l;
                let dst = &mut col[row..row + l];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    let out = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *o = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], d: &Dims, geo: ConvGeometry, x: &mut [f64]) {
    let l = d.cols();
    let (s, p) = (geo.stride as isize, geo.pad as isize);
    for ci in 0..d.cin {
        let plane = &mut x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((ci * d.k + ky) * d.k + kx) * l;
                let src = &col[row..row + l];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims_of(in_shape: Shape, k: usize, geo: ConvGeometry) -> Dims {
    let [_, cin, h, w] = in_shape;
    Dims { cin, h, w, k, ho: geo.out_dim(h, k), wo: geo.out_dim(w, k) }
}

pub(crate) fn conv_forward(x: &Tensor, w: &Tensor, geo: ConvGeometry) -> Tensor {
    let [n, cin, _, _] = x.shape();
    let [cout, wcin, k, k2] = w.shape();
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(cin, wcin, "conv2d: input has {cin} channels, kernel expects {wcin}");
    let d = dims_of(x.shape(), k, geo);
    let (kk, l) = (d.rows(), d.cols());
    let mut out = Tensor::zeros([n, cout, d.ho, d.wo]);
    let mut col = vec![0.0; if geo.trivial(k) { 0 } else { kk * l }];
    let in_len = cin * d.h * d.w;
    for ni in 0..n {
        let xs = &x.data()[ni * in_len..(ni + 1) * in_len];
        let b: &[f64] = if geo.trivial(k) {
            xs
        } else {
            im2col(xs, &d, geo, &mut col);
            &col
        };
        let o = &mut out.data_mut()[ni * cout * l..(ni + 1) * cout * l];
        gemm(cout, kk, l, w.data(), (kk, 1), b, (l, 1), 0.0, o);
    }
    out
}

pub(crate) fn conv_input_grad(g: &Tensor, w: &Tensor, in_shape: Shape, geo: ConvGeometry) -> Tensor {
    let [n, cout, _, _] = g.shape();
    let [_, _, k, _] = w.shape();
    let d = dims_of(in_shape, k, geo);
    assert_eq!([g.shape()[2], g.shape()[3]], [d.ho, d.wo], "conv_input_grad: output dims");
    let (kk, l) = (d.rows(), d.cols());
    let mut dx = Tensor::zeros([n, d.cin, d.h, d.w]);
    let in_len = d.cin * d.h * d.w;
    let mut col = vec![0.0; kk * l];
    for ni in 0..n {
        let gs = &g.data()[ni * cout * l..(ni + 1) * cout * l];
        let dxs = &mut dx.data_mut()[ni * in_len..(ni + 1) * in_len];
        if geo.trivial(k) {
            gemm(kk, cout, l, w.data(), (1, kk), gs, (l, 1), 0.0, dxs);
        } else {
            gemm(kk, cout, l, w.data(), (1, kk), gs, (l, 1), 0.0, &mut col);
            col2im_add(&col, &d, geo, dxs);
        }
    }
    dx
}

pub(crate) fn conv_weight_grad(x: &Tensor, g: &Tensor, k: usize, geo: ConvGeometry) -> Tensor {
    let [n, cin, _, _] = x.shape();
    let cout = g.shape()[1];
    let d = dims_of(x.shape(), k, geo);
    assert_eq!([g.shape()[2], g.shape()[3]], [d.ho, d.wo], "conv_weight_grad: output dims");
    let (kk, l) = (d.rows(), d.cols());
    let mut dw = Tensor::zeros([cout, cin, k, k]);
    let in_len = cin * d.h * d.w;
    let mut col = vec![0.0; if geo.trivial(k) { 0 } else { kk * l }];
    for ni in 0..n {
        let xs = &x.data()[ni * in_len..(ni + 1) * in_len];
        let b: &[f64] = if geo.trivial(k) {
            xs
        } else {
            im2col(xs, &d, geo, &mut col);
            &col
        };
        let gs = &g.data()[ni * cout * l..(ni + 1) * cout * l];
        gemm(cout, l, kk, gs, (l, 1), b, (1, l), 1.0, dw.data_mut());
    }
    dw
}

impl Var {
    /// Cross-correlation of `self` (`[N, Cin, H, W]`) with `weight` (`[Cout, Cin, k, k]`).
    pub fn conv2d(&self, weight: &Var, geo: ConvGeometry) -> Var {
        let x_shape = self.shape();
        let k = weight.shape()[2];
        Var::from_op(
            "conv2d",
            conv_forward(self.value(), weight.value(), geo),
            vec![self.clone(), weight.clone()],
            Box::new(move |p, g, needs| {
                vec![
                    needs[0].then(|| g.conv_input_grad(&p[1], x_shape, geo)),
                    needs[1].then(|| p[0].conv_weight_grad(g, k, geo)),
                ]
            }),
        )
    }

    /// Adjoint of [`Var::conv2d`] with respect to its input; `self` is the
    /// output-space gradient.
    pub fn conv_input_grad(&self, weight: &Var, in_shape: Shape, geo: ConvGeometry) -> Var {
        Var::from_op(
            "conv_input_grad",
            conv_input_grad(self.value(), weight.value(), in_shape, geo),
            vec![self.clone(), weight.clone()],
            Box::new(move |p, dz, needs| {
                let k = p[1].shape()[2];
                vec![
                    needs[0].then(|| dz.conv2d(&p[1], geo)),
                    needs[1].then(|| dz.conv_weight_grad(&p[0], k, geo)),
                ]
            }),
        )
    }

    /// Adjoint of [`Var::conv2d`] with respect to its kernel; `self` is the
    /// layer input and `out_grad` the output-space gradient.
    pub fn conv_weight_grad(&self, out_grad: &Var, k: usize, geo: ConvGeometry) -> Var {
        let x_shape = self.shape();
        Var::from_op(
            "conv_weight_grad",
            conv_weight_grad(self.value(), out_grad.value(), k, geo),
            vec![self.clone(), out_grad.clone()],
            Box::new(move |p, dz, needs| {
                vec![
                    needs[0].then(|| p[1].conv_input_grad(dz, x_shape, geo)),
                    needs[1].then(|| p[0].conv2d(dz, geo)),
                ]
            }),
        )
    }
}
