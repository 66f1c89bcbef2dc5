//! Building blocks shared by the generator, shape controller, critics and the
//! reference segmenter.

use autograd::ops::ConvGeometry;
use autograd::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Visitor over named trainable parameters.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `(name, value)` of every parameter in visiting order.
pub fn named_tensors(m: &dyn Module, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit(prefix, &mut |n, v| out.push((n.to_string(), v.value().clone())));
    out
}

pub fn param_count(m: &dyn Module) -> usize {
    let mut total = 0;
    m.visit("", &mut |_, v| total += v.value().numel());
    total
}

/// Parameter shapes in visiting order, without names.
pub fn param_shapes(m: &dyn Module) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    m.visit("", &mut |_, v| out.push(v.shape()));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    None,
}

impl Activation {
    pub fn apply(self, x: &Var) -> Var {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(0.2),
            Activation::None => x.clone(),
        }
    }
}

/// 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    /// He-normal initialised convolution; `gain` scales the standard deviation.
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
        let weight = Tensor::from_fn([cout, cin, kernel, kernel], |_| normal.sample(rng));
        Self {
            weight: Var::param(weight),
            bias: Var::param(Tensor::zeros([1, cout, 1, 1])),
            geometry: ConvGeometry::new(stride, pad),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.conv2d(&self.weight, self.geometry).add_bcast(&self.bias)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-sample, per-channel normalisation over the spatial axes with an
/// affine transform.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: Var,
    pub beta: Var,
}

const INSTANCE_NORM_EPS: f64 = 1e-5;

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Var::param(Tensor::ones([1, channels, 1, 1])),
            beta: Var::param(Tensor::zeros([1, channels, 1, 1])),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let [n, c, _, _] = x.shape();
        let stats = [n, c, 1, 1];
        let centred = x.sub_bcast(&x.mean_to(stats));
        let inv_std = centred.square().mean_to(stats).add_scalar(INSTANCE_NORM_EPS).powf(-0.5);
        centred.mul_bcast(&inv_std).mul_bcast(&self.gamma).add_bcast(&self.beta)
    }
}

impl Module for InstanceNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// conv -> instance norm -> activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: InstanceNorm,
    pub act: Activation,
}

impl ConvBlock {
    pub fn new(cin: usize, cout: usize, stride: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, 3, stride, 1, 1.0, rng),
            norm: InstanceNorm::new(cout),
            act,
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        self.act.apply(&self.norm.forward(&self.conv.forward(x)))
    }
}

impl Module for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Two 3x3 conv-norm layers with an identity shortcut.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBlock,
    pub second: ConvBlock,
}

impl ResidualBlock {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBlock::new(channels, channels, 1, Activation::Relu, rng),
            second: ConvBlock::new(channels, channels, 1, Activation::None, rng),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.add(&self.second.forward(&self.first.forward(x)))
    }
}

impl Module for ResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.first.visit(&join(prefix, "first"), f);
        self.second.visit(&join(prefix, "second"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.first.visit_mut(&join(prefix, "first"), f);
        self.second.visit_mut(&join(prefix, "second"), f);
    }
}

/// First half of the channels of a feature map; the skip-connection payload
/// of the generator.
pub fn half_channel_skip(feature: &Var) -> Var {
    let c = feature.shape()[1];
    assert!(c % 2 == 0, "half_channel_skip needs an even channel count, got {c}");
    feature.slice_channels(0, c / 2)
}

/// U-Net encoder: a full-resolution stem followed by stride-2 levels.
/// Returns the bottleneck and the per-level skip features.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: ConvBlock,
    pub downs: Vec<ConvBlock>,
    pub half_skips: bool,
}

/// Channel width at U-Net level `i` (0 = full resolution).
pub fn level_channels(base: usize, level: usize) -> usize {
    base << level.min(2)
}

impl Encoder {
    pub fn new(cin: usize, base: usize, depth: usize, half_skips: bool, rng: &mut ChaCha8Rng) -> Self {
        let stem = ConvBlock::new(cin, base, 1, Activation::Relu, rng);
        let downs = (0..depth)
            .map(|i| {
                ConvBlock::new(
                    level_channels(base, i),
                    level_channels(base, i + 1),
                    2,
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        Self { stem, downs, half_skips }
    }

    pub fn forward(&self, x: &Var) -> (Var, Vec<Var>) {
        let mut h = self.stem.forward(x);
        let mut skips = Vec::with_capacity(self.downs.len());
        for down in &self.downs {
            skips.push(if self.half_skips { half_channel_skip(&h) } else { h.clone() });
            h = down.forward(&h);
        }
        (h, skips)
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, d) in self.downs.iter().enumerate() {
            d.visit(&join(prefix, &format!("down{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, d) in self.downs.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("down{i}")), f);
        }
    }
}

/// U-Net decoder: nearest 2x upsampling, skip concatenation, 3x3 conv block;
/// a final 3x3 conv produces `cout` channels without activation.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub ups: Vec<ConvBlock>,
    pub out: Conv2d,
}

impl Decoder {
    pub fn new(base: usize, depth: usize, half_skips: bool, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let ups = (0..depth)
            .rev()
            .map(|i| {
                let skip = if half_skips { level_channels(base, i) / 2 } else { level_channels(base, i) };
                ConvBlock::new(
                    level_channels(base, i + 1) + skip,
                    level_channels(base, i),
                    1,
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        let out = Conv2d::new(base, cout, 3, 1, 1, 0.5, rng);
        Self { ups, out }
    }

    pub fn forward(&self, bottleneck: &Var, skips: &[Var]) -> Var {
        let mut h = bottleneck.clone();
        for (up, skip) in self.ups.iter().zip(skips.iter().rev()) {
            h = up.forward(&Var::concat_channels(&[h.upsample2(), skip.clone()]));
        }
        self.out.forward(&h)
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        for (i, u) in self.ups.iter().enumerate() {
            u.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("up{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Plain U-Net with full skips and a sigmoid output, used by the shape
/// controller and the reference segmenter.
#[derive(Clone, Debug)]
pub struct UNet {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl UNet {
    pub fn new(cin: usize, base: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: Encoder::new(cin, base, depth, false, rng),
            decoder: Decoder::new(base, depth, false, 1, rng),
        }
    }

    /// Per-pixel logits.
    pub fn logits(&self, x: &Var) -> Var {
        let (h, skips) = self.encoder.forward(x);
        self.decoder.forward(&h, &skips)
    }

    /// Per-pixel probabilities in `[0, 1]`.
    pub fn forward(&self, x: &Var) -> Var {
        self.logits(x).sigmoid()
    }

    pub fn depth(&self) -> usize {
        self.encoder.downs.len()
    }
}

impl Module for UNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Seeds a fresh generator for one network from a parent stream.
pub(crate) fn child_rng(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(rng.gen())
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tensor;
    use rand::SeedableRng;

    #[test]
    fn half_skip_keeps_leading_channels() {
        let f = Var::constant(Tensor::from_fn([1, 32, 2, 2], |[_, c, h, w]| (c * 4 + h * 2 + w) as f64));
        let s = half_channel_skip(&f);
        assert_eq!(s.shape(), [1, 16, 2, 2]);
        assert_eq!(s.value().data(), f.value().channels(0, 16).data());
    }

    #[test]
    #[should_panic(expected = "even channel count")]
    fn half_skip_rejects_odd_channels() {
        half_channel_skip(&Var::constant(Tensor::zeros([1, 3, 2, 2])));
    }

    #[test]
    fn encoder_skip_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(4, 8, 3, true, &mut rng);
        let (h, skips) = enc.forward(&Var::constant(Tensor::zeros([1, 4, 16, 16])));
        assert_eq!(h.shape(), [1, 32, 2, 2]);
        let widths: Vec<usize> = skips.iter().map(|s| s.shape()[1]).collect();
        assert_eq!(widths, vec![4, 8, 16]);
        let full = Encoder::new(4, 8, 3, false, &mut rng);
        let (_, skips) = full.forward(&Var::constant(Tensor::zeros([1, 4, 16, 16])));
        assert_eq!(skips.iter().map(|s| s.shape()[1]).collect::<Vec<_>>(), vec![8, 16, 32]);
    }

    #[test]
    fn unet_output_is_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::new(2, 4, 2, &mut rng);
        let x = Var::constant(Tensor::from_fn([1, 2, 8, 8], |[_, c, h, w]| (c + h * w) as f64 * 0.3 - 2.0));
        let p = net.forward(&x);
        assert_eq!(p.shape(), [1, 1, 8, 8]);
        assert!(p.value().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(param_count(&net), param_shapes(&net).iter().map(|s| s.iter().product::<usize>()).sum::<usize>());
    }
}
