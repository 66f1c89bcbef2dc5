//! Channel slicing/concatenation and 2x nearest resampling.

use crate::graph::Var;
use crate::tensor::Tensor;

fn pad_channels_tensor(x: &Tensor, start: usize, total: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = Tensor::zeros([n, total, h, w]);
    let dst = out.data_mut();
    for ni in 0..n {
        let s = ni * c * plane;
        let d = (ni * total + start) * plane;
        dst[d..d + c * plane].copy_from_slice(&x.data()[s..s + c * plane]);
    }
    out
}

fn upsample2_tensor(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for hi in 0..h {
            let row = &src[(p * h + hi) * w..(p * h + hi + 1) * w];
            for dy in 0..2 {
                let o = (p * 2 * h + 2 * hi + dy) * 2 * w;
                for (wi, &v) in row.iter().enumerate() {
                    dst[o + 2 * wi] = v;
                    dst[o + 2 * wi + 1] = v;
                }
            }
        }
    }
    out
}

fn sumpool2_tensor(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "sumpool2 needs even spatial dims, got {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for hi in 0..h {
            let row = &src[(p * h + hi) * w..(p * h + hi + 1) * w];
            let o = (p * ho + hi / 2) * wo;
            for (wi, &v) in row.iter().enumerate() {
                dst[o + wi / 2] += v;
            }
        }
    }
    out
}

impl Var {
    /// Channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Var {
        let total = self.shape()[1];
        Var::from_op(
            "slice_channels",
            self.value().channels(start, len),
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.pad_channels(start, total))]),
        )
    }

    /// Places `self` at channel offset `start` of a zero tensor with `total` channels.
    pub fn pad_channels(&self, start: usize, total: usize) -> Var {
        let c = self.shape()[1];
        assert!(start + c <= total, "pad_channels out of range");
        Var::from_op(
            "pad_channels",
            pad_channels_tensor(self.value(), start, total),
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.slice_channels(start, c))]),
        )
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero vars");
        let [n, _, h, w] = parts[0].shape();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let plane = h * w;
        let mut out = Tensor::zeros([n, total, h, w]);
        {
            let dst = out.data_mut();
            let mut offset = 0;
            for (p, &c) in parts.iter().zip(&widths) {
                let [pn, _, ph, pw] = p.shape();
                assert_eq!((pn, ph, pw), (n, h, w), "concat_channels shape mismatch");
                for ni in 0..n {
                    let s = ni * c * plane;
                    let d = (ni * total + offset) * plane;
                    dst[d..d + c * plane].copy_from_slice(&p.value().data()[s..s + c * plane]);
                }
                offset += c;
            }
        }
        Var::from_op(
            "concat_channels",
            out,
            parts.to_vec(),
            Box::new(move |_, g, needs| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| {
                        let r = need.then(|| g.slice_channels(offset, c));
                        offset += c;
                        r
                    })
                    .collect()
            }),
        )
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Var {
        Var::from_op(
            "upsample2",
            upsample2_tensor(self.value()),
            vec![self.clone()],
            Box::new(|_, g, _| vec![Some(g.sumpool2())]),
        )
    }

    /// Sum over non-overlapping 2x2 blocks (adjoint of [`Var::upsample2`]).
    pub fn sumpool2(&self) -> Var {
        Var::from_op(
            "sumpool2",
            sumpool2_tensor(self.value()),
            vec![self.clone()],
            Box::new(|_, g, _| vec![Some(g.upsample2())]),
        )
    }
}
