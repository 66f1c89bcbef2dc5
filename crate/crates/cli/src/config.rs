use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use targan::data_model::PhantomSpec;
use targan::evaluation::{FeatureEmbedder, Metric, SegmenterConfig};
use targan::training::{TrainConfig, Variant};
use targan::{Error, Result};

/// Evaluation and ablation options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub segmenter: SegmenterConfig,
    pub embedder_seed: u64,
    pub embedder_dim: usize,
    /// Use the averaged generator for translation and metrics.
    pub use_ema: bool,
    pub ablation_seeds: Vec<u64>,
    /// Ablation rows; the six table variants when absent.
    pub ablation_variants: Option<Vec<Variant>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: Metric::ALL.to_vec(),
            segmenter: SegmenterConfig::default(),
            embedder_seed: FeatureEmbedder::DEFAULT_SEED,
            embedder_dim: FeatureEmbedder::DEFAULT_DIM,
            use_ema: true,
            ablation_seeds: vec![0, 1, 2],
            ablation_variants: None,
        }
    }
}

/// Whole run description. `seed` is the single source of randomness: it
/// replaces the seeds of the training and segmenter sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset root; `<out_dir>/data` when absent.
    pub data_dir: Option<PathBuf>,
    pub phantom: PhantomSpec,
    pub train: TrainConfig,
    pub evaluation: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data_dir: None,
            phantom: PhantomSpec::default(),
            train: TrainConfig::default(),
            evaluation: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Config(format!("cannot read {}: {e}", path.display())),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
    }

    /// Applies command-line overrides and propagates the seed.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self.train.seed = self.seed;
        self.evaluation.segmenter.seed = self.seed;
        self.phantom.validate()?;
        self.train.validate()?;
        if let Some(vs) = &self.evaluation.ablation_variants {
            for v in vs {
                v.validate()?;
            }
        }
        Ok(self)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn segmenter_path(&self, modality: &str) -> PathBuf {
        self.out_dir.join("segmenters").join(format!("{modality}.safetensors"))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        let path = dir.join("resolved_config.json");
        let text = serde_json::to_string_pretty(self).expect("config serialises");
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}
