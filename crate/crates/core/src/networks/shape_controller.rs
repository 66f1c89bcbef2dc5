//! Shape controller: predicts the foreground stencil of a synthetic image.

use autograd::Var;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Module, UNet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeControllerConfig {
    pub base_channels: usize,
    pub depth: usize,
}

impl Default for ShapeControllerConfig {
    fn default() -> Self {
        Self { base_channels: 8, depth: 2 }
    }
}

#[derive(Clone, Debug)]
pub struct ShapeController {
    pub net: UNet,
}

impl ShapeController {
    pub fn new(config: &ShapeControllerConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 || config.depth == 0 {
            return Err(Error::Config("shape controller needs positive width and depth".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { net: UNet::new(1, config.base_channels, config.depth, &mut rng) })
    }

    /// Soft mask in `[0, 1]`, same spatial size as the input.
    pub fn forward(&self, img: &Var) -> Var {
        self.net.forward(img)
    }
}

impl Module for ShapeController {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Var)) {
        self.net.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Var)) {
        self.net.visit_mut(prefix, f);
    }
}
