//! Generator, shape controller and critics.

mod discriminator;
mod generator;
pub mod layers;
mod shape_controller;

pub use discriminator::{CriticOutput, Discriminator, DiscriminatorConfig};
pub use generator::{inject_modality, Generator, GeneratorConfig, SharedMiddle, Stream};
pub use layers::{half_channel_skip, named_tensors, param_count, param_shapes, Module};
pub use shape_controller::{ShapeController, ShapeControllerConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Architecture of all networks of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator: GeneratorConfig,
    pub shape_controller: ShapeControllerConfig,
    pub discriminator: DiscriminatorConfig,
}

impl NetworkConfig {
    pub fn new(n_modalities: usize) -> Self {
        Self {
            generator: GeneratorConfig::new(n_modalities),
            shape_controller: ShapeControllerConfig::default(),
            discriminator: DiscriminatorConfig::new(n_modalities),
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.generator.n_modalities
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.n_modalities != self.discriminator.n_modalities {
            return Err(crate::Error::Config(
                "generator and discriminator disagree on n_modalities".into(),
            ));
        }
        Ok(())
    }
}
