//! Double-stream generator: two encoder/decoder pairs around one shared
//! middle block.

use autograd::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{child_rng, join, level_channels, Decoder, Encoder, Module, ResidualBlock};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    /// Number of stride-2 levels.
    pub depth: usize,
    /// Residual blocks in the shared middle block.
    pub middle_blocks: usize,
    pub n_modalities: usize,
}

impl GeneratorConfig {
    pub fn new(n_modalities: usize) -> Self {
        Self { base_channels: 32, depth: 3, middle_blocks: 2, n_modalities }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "generator base_channels must be even and positive (half-channel skips), got {}",
                self.base_channels
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("generator depth must be at least 1".into()));
        }
        if self.n_modalities < 2 {
            return Err(Error::Config("n_modalities must be at least 2".into()));
        }
        Ok(())
    }

    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        let f = 1 << self.depth;
        if height % f != 0 || width % f != 0 {
            return Err(Error::Config(format!(
                "resolution {height}x{width} not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        1 + self.n_modalities
    }
}

/// Appends `n` constant label planes; plane `t` is all ones.
pub fn inject_modality(x: &Var, targets: &[usize], n: usize) -> Var {
    let [b, _, h, w] = x.shape();
    assert_eq!(targets.len(), b, "one target modality per sample");
    let labels = Tensor::from_fn([b, n, h, w], |[i, c, _, _]| f64::from(u8::from(targets[i] == c)));
    Var::concat_channels(&[x.clone(), Var::constant(labels)])
}

/// One encoder/decoder pair. The decoder output is tanh-bounded.
#[derive(Clone, Debug)]
pub struct Stream {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Stream {
    fn new(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: Encoder::new(cfg.input_channels(), cfg.base_channels, cfg.depth, true, rng),
            decoder: Decoder::new(cfg.base_channels, cfg.depth, true, 1, rng),
        }
    }
}

/// Residual blocks at the bottleneck, used by both streams.
#[derive(Clone, Debug)]
pub struct SharedMiddle {
    pub blocks: Vec<ResidualBlock>,
}

impl SharedMiddle {
    pub fn forward(&self, x: &Var) -> Var {
        self.blocks.iter().fold(x.clone(), |h, b| b.forward(&h))
    }
}

impl Module for SharedMiddle {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Generator parameters. `target` is `None` for models trained without the
/// target-area stream.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub encoder_x: Encoder,
    pub decoder_x: Decoder,
    pub middle: SharedMiddle,
    pub target: Option<Stream>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, with_target_stream: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let whole = Stream::new(&config, &mut child_rng(&mut rng));
        let mut mrng = child_rng(&mut rng);
        let bottleneck = level_channels(config.base_channels, config.depth);
        let middle = SharedMiddle {
            blocks: (0..config.middle_blocks).map(|_| ResidualBlock::new(bottleneck, &mut mrng)).collect(),
        };
        let mut trng = child_rng(&mut rng);
        let target = with_target_stream.then(|| Stream::new(&config, &mut trng));
        Ok(Self {
            config,
            encoder_x: whole.encoder,
            decoder_x: whole.decoder,
            middle,
            target,
        })
    }

    pub fn has_target_stream(&self) -> bool {
        self.target.is_some()
    }

    fn check(&self, x: &Var, targets: &[usize]) -> Result<()> {
        let [b, c, h, w] = x.shape();
        if c != 1 {
            return Err(Error::Shape(format!("generator expects 1 channel, got {c}")));
        }
        if targets.len() != b {
            return Err(Error::Shape(format!("{} target labels for batch of {b}", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= self.config.n_modalities) {
            return Err(Error::Config(format!(
                "target modality {t} out of range for {} modalities",
                self.config.n_modalities
            )));
        }
        self.config.check_resolution(h, w)
    }

    fn run(&self, encoder: &Encoder, decoder: &Decoder, x: &Var, targets: &[usize]) -> Var {
        let input = inject_modality(x, targets, self.config.n_modalities);
        let (h, skips) = encoder.forward(&input);
        decoder.forward(&self.middle.forward(&h), &skips).tanh()
    }

    /// `G(x_s, r_s, t) -> (x_t, r_t)`.
    pub fn forward(&self, x_s: &Var, r_s: &Var, targets: &[usize]) -> Result<(Var, Var)> {
        self.check(x_s, targets)?;
        if x_s.shape() != r_s.shape() {
            return Err(Error::Shape(format!(
                "whole image {:?} vs target area {:?}",
                x_s.shape(),
                r_s.shape()
            )));
        }
        let stream = self
            .target
            .as_ref()
            .ok_or_else(|| Error::Config("generator has no target-area stream".into()))?;
        let x_t = self.run(&self.encoder_x, &self.decoder_x, x_s, targets);
        let r_t = self.run(&stream.encoder, &stream.decoder, r_s, targets);
        Ok((x_t, r_t))
    }

    /// Whole-image stream only; the target-area stream is not touched.
    pub fn translate(&self, x_s: &Var, targets: &[usize]) -> Result<Var> {
        self.check(x_s, targets)?;
        Ok(self.run(&self.encoder_x, &self.decoder_x, x_s, targets))
    }
}

impl Module for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.encoder_x.visit(&join(prefix, "encoder_x"), f);
        self.middle.visit(&join(prefix, "middle"), f);
        self.decoder_x.visit(&join(prefix, "decoder_x"), f);
        if let Some(s) = &self.target {
            s.encoder.visit(&join(prefix, "encoder_r"), f);
            s.decoder.visit(&join(prefix, "decoder_r"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.encoder_x.visit_mut(&join(prefix, "encoder_x"), f);
        self.middle.visit_mut(&join(prefix, "middle"), f);
        self.decoder_x.visit_mut(&join(prefix, "decoder_x"), f);
        if let Some(s) = &mut self.target {
            s.encoder.visit_mut(&join(prefix, "encoder_r"), f);
            s.decoder.visit_mut(&join(prefix, "decoder_r"), f);
        }
    }
}
