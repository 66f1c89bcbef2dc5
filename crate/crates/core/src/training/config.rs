use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, GeneratorConfig, NetworkConfig, ShapeControllerConfig};

/// Which components of the model are trained. The crossing loss needs the
/// target-area stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub use_shape_controller: bool,
    pub use_target_stream: bool,
    pub use_crossing: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self::FULL
    }
}

impl Variant {
    pub const FULL: Variant =
        Variant { use_shape_controller: true, use_target_stream: true, use_crossing: true };

    pub fn validate(&self) -> Result<()> {
        if self.use_crossing && !self.use_target_stream {
            return Err(Error::Config(
                "illegal variant: the crossing loss requires the target-area stream".into(),
            ));
        }
        Ok(())
    }

    /// Row label in the ablation table, e.g. `TarGAN w/o S, C`.
    pub fn label(&self) -> String {
        let mut missing = Vec::new();
        if !self.use_shape_controller {
            missing.push("S");
        }
        if !self.use_target_stream {
            missing.push("T");
        }
        if !self.use_crossing {
            missing.push("C");
        }
        if missing.is_empty() {
            "TarGAN".into()
        } else {
            format!("TarGAN w/o {}", missing.join(", "))
        }
    }

    /// Directory-friendly name, e.g. `full` or `wo_s_c`.
    pub fn slug(&self) -> String {
        let l = self.label();
        match l.strip_prefix("TarGAN w/o ") {
            Some(rest) => format!("wo_{}", rest.replace(", ", "_").to_lowercase()),
            None => "full".into(),
        }
    }
}

/// Network widths and depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub middle_blocks: usize,
    pub shape_base_channels: usize,
    pub shape_depth: usize,
    pub critic_base_channels: usize,
    pub critic_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 3,
            middle_blocks: 2,
            shape_base_channels: 8,
            shape_depth: 2,
            critic_base_channels: 32,
            critic_depth: 3,
        }
    }
}

impl ModelConfig {
    pub fn network_config(&self, n_modalities: usize) -> NetworkConfig {
        NetworkConfig {
            generator: GeneratorConfig {
                base_channels: self.base_channels,
                depth: self.depth,
                middle_blocks: self.middle_blocks,
                n_modalities,
            },
            shape_controller: ShapeControllerConfig {
                base_channels: self.shape_base_channels,
                depth: self.shape_depth,
            },
            discriminator: DiscriminatorConfig {
                base_channels: self.critic_base_channels,
                depth: self.critic_depth,
                n_modalities,
            },
        }
    }
}

/// Optimisation settings. Serialised field names are the public config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "lr_G_S")]
    pub lr_g_s: f64,
    #[serde(rename = "lr_D")]
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    pub model: ModelConfig,
    pub variant: Variant,
    /// Write `samples/epoch_<k>.png` after every epoch.
    pub sample_grids: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g_s: 1e-4,
            lr_d: 3e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            batch_size: 4,
            epochs: 50,
            ema_decay: 0.999,
            weights: LossWeights::default(),
            seed: 0,
            d_steps_per_g_step: 1,
            model: ModelConfig::default(),
            variant: Variant::FULL,
            sample_grids: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_g_s >= 0.0 && self.lr_d >= 0.0 && self.lr_g_s.is_finite() && self.lr_d.is_finite()) {
            return Err(Error::Config("lr_G_S and lr_D must be finite and non-negative".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay must be in (0, 1), got {}", self.ema_decay)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::Config(
                "batch_size, epochs and d_steps_per_g_step must be positive".into(),
            ));
        }
        self.weights.validate()?;
        self.variant.validate()
    }
}
