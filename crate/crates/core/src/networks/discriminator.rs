//! PatchGAN critic with an auxiliary modality classifier.

use autograd::Var;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, Conv2d, Module};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    /// Number of stride-2 layers; the patch map is `H / 2^depth` on a side.
    pub depth: usize,
    pub n_modalities: usize,
}

impl DiscriminatorConfig {
    pub fn new(n_modalities: usize) -> Self {
        Self { base_channels: 32, depth: 3, n_modalities }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 || self.n_modalities < 2 {
            return Err(Error::Config(
                "discriminator needs base_channels > 0, depth > 0 and >= 2 modalities".into(),
            ));
        }
        Ok(())
    }

    /// Number of classification logits: real-from-each-modality followed by
    /// fake-translated-from-each-modality.
    pub fn n_classes(&self) -> usize {
        2 * self.n_modalities
    }
}

/// Critic output for a batch.
#[derive(Clone, Debug)]
pub struct CriticOutput {
    /// `[N, 1, H / 2^d, W / 2^d]` unbounded patch scores.
    pub src: Var,
    /// `[N, 2n, 1, 1]` category logits.
    pub cls: Var,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub trunk: Vec<Conv2d>,
    pub src_head: Conv2d,
    pub cls_head: Conv2d,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 1;
        let mut trunk = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let cout = config.base_channels << i.min(3);
            trunk.push(Conv2d::new(cin, cout, 4, 2, 1, 1.0, &mut rng));
            cin = cout;
        }
        let src_head = Conv2d::new(cin, 1, 3, 1, 1, 0.5, &mut rng);
        let cls_head = Conv2d::new(cin, config.n_classes(), 1, 1, 0, 0.5, &mut rng);
        Ok(Self { config, trunk, src_head, cls_head })
    }

    fn features(&self, img: &Var) -> Var {
        self.trunk.iter().fold(img.clone(), |h, c| c.forward(&h).leaky_relu(0.2))
    }

    pub fn forward(&self, img: &Var) -> CriticOutput {
        let h = self.features(img);
        let [n, c, _, _] = h.shape();
        let pooled = h.mean_to([n, c, 1, 1]);
        CriticOutput { src: self.src_head.forward(&h), cls: self.cls_head.forward(&pooled) }
    }

    /// Patch scores only; skips the classification head.
    pub fn src(&self, img: &Var) -> Var {
        self.src_head.forward(&self.features(img))
    }
}

impl Module for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        for (i, c) in self.trunk.iter().enumerate() {
            c.visit(&join(prefix, &format!("trunk{i}")), f);
        }
        self.src_head.visit(&join(prefix, "src"), f);
        self.cls_head.visit(&join(prefix, "cls"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        for (i, c) in self.trunk.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("trunk{i}")), f);
        }
        self.src_head.visit_mut(&join(prefix, "src"), f);
        self.cls_head.visit_mut(&join(prefix, "cls"), f);
    }
}
