//! Metrics: FID over fixed random features, S-score through a reference
//! segmenter, DICE/RAVD, phantom ground-truth error, image enrichment and
//! the ablation runner.

mod ablation;
mod fid;
mod segmentation;
mod translation;

pub use ablation::{run_ablation, ablation_variants, AblationRun, AblationTable};
pub use fid::{compute_fid, frechet_distance, gaussian_fit, FeatureEmbedder};
pub use segmentation::{
    compute_s_score, dice, ravd, soft_dice_loss, train_reference_segmenter, train_segmenter, SegMetrics,
    Segmenter, SegmenterConfig,
};
pub use translation::{
    enrich_images, enrichment_concat, phantom_translation_error, run_enrichment, translate_images,
    EnrichmentResult, TranslationError,
};

/// Alias used by the ablation runner for the component switches.
pub use crate::training::Variant as AblationVariant;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{BinaryMask, Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::networks::Generator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fid,
    SScore,
    Dice,
    Ravd,
    WholeL1,
    TargetL1,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Metric::Fid, Metric::SScore, Metric::Dice, Metric::Ravd, Metric::WholeL1, Metric::TargetL1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fid => "fid",
            Metric::SScore => "s_score",
            Metric::Dice => "dice",
            Metric::Ravd => "ravd",
            Metric::WholeL1 => "whole_l1",
            Metric::TargetL1 => "target_l1",
        }
    }

    fn needs_segmenter(self) -> bool {
        matches!(self, Metric::SScore | Metric::Dice | Metric::Ravd)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key || (key == "sscore" && *m == Metric::SScore))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric {s:?}; expected one of fid, s_score, dice, ravd, whole_l1, target_l1"
                ))
            })
    }
}

/// Metrics for one target modality. Unrequested metrics are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ravd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub whole_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_l1: Option<f64>,
}

impl ModalityMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Fid => self.fid,
            Metric::SScore => self.s_score,
            Metric::Dice => self.dice,
            Metric::Ravd => self.ravd,
            Metric::WholeL1 => self.whole_l1,
            Metric::TargetL1 => self.target_l1,
        }
    }

    fn slot(&mut self, m: Metric) -> &mut Option<f64> {
        match m {
            Metric::Fid => &mut self.fid,
            Metric::SScore => &mut self.s_score,
            Metric::Dice => &mut self.dice,
            Metric::Ravd => &mut self.ravd,
            Metric::WholeL1 => &mut self.whole_l1,
            Metric::TargetL1 => &mut self.target_l1,
        }
    }
}

/// Evaluation report. `per_modality` is keyed by target modality name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_modality: BTreeMap<String, ModalityMetrics>,
    pub mean: ModalityMetrics,
    pub config_hash: String,
    pub checkpoint_path: String,
    #[serde(skip)]
    pub metrics: Vec<Metric>,
}

impl MetricsReport {
    /// Flat table: one row per target modality plus `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("modality");
        for m in &self.metrics {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        let rows = self.per_modality.iter().map(|(k, v)| (k.as_str(), v)).chain([("mean", &self.mean)]);
        for (name, row) in rows {
            out.push_str(name);
            for m in &self.metrics {
                out.push(',');
                if let Some(v) = row.get(*m) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Hex SHA-256 of the JSON serialisation of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Computes the requested metrics for every target modality `t`, using the
/// translations of all test images of the other modalities to `t`.
/// Segmenter-based metrics need `segmenters[t]`.
pub fn evaluate(
    g: &Generator,
    dataset: &Dataset,
    metrics: &[Metric],
    segmenters: &BTreeMap<usize, Segmenter>,
    embedder: &FeatureEmbedder,
) -> Result<(BTreeMap<String, ModalityMetrics>, ModalityMetrics)> {
    let n = dataset.n_modalities();
    if metrics.iter().any(|m| m.needs_segmenter()) {
        if let Some(t) = (0..n).find(|t| !segmenters.contains_key(t)) {
            return Err(Error::Config(format!(
                "no reference segmenter for modality {}; run `targan train-segmenter` first",
                dataset.modalities[t].name
            )));
        }
    }
    let mut per = BTreeMap::new();
    for t in 0..n {
        let mut fake = Vec::new();
        let mut masks: Vec<BinaryMask> = Vec::new();
        let mut errors = Vec::new();
        for s in (0..n).filter(|&s| s != t) {
            let src: Vec<_> = dataset.split(Split::Test, Some(s)).collect();
            let imgs: Vec<ImageTensor> = src.iter().map(|x| x.x.clone()).collect();
            fake.extend(translate_images(g, &imgs, t)?);
            masks.extend(src.iter().map(|x| x.y.clone()));
            if metrics.iter().any(|m| matches!(m, Metric::WholeL1 | Metric::TargetL1)) {
                errors.push(phantom_translation_error(g, dataset, s, t)?);
            }
        }
        let real: Vec<ImageTensor> = dataset.split(Split::Test, Some(t)).map(|x| x.x.clone()).collect();
        let mut row = ModalityMetrics::default();
        let seg_metrics = match segmenters.get(&t) {
            Some(seg) if metrics.iter().any(|m| m.needs_segmenter()) => {
                let preds = seg.predict_images(&fake);
                let k = preds.len() as f64;
                let d = preds.iter().zip(&masks).map(|(p, m)| dice(p, m)).sum::<f64>() / k;
                let mut r = 0.0;
                for (p, m) in preds.iter().zip(&masks) {
                    r += ravd(m, p)? / k;
                }
                Some(SegMetrics { dice: d, ravd: r })
            }
            _ => None,
        };
        for &m in metrics {
            let v = match m {
                Metric::Fid => compute_fid(embedder, &real, &fake)?,
                Metric::SScore => 100.0 * seg_metrics.expect("checked").dice,
                Metric::Dice => seg_metrics.expect("checked").dice,
                Metric::Ravd => seg_metrics.expect("checked").ravd,
                Metric::WholeL1 => errors.iter().map(|e| e.whole_l1).sum::<f64>() / errors.len() as f64,
                Metric::TargetL1 => errors.iter().map(|e| e.target_l1).sum::<f64>() / errors.len() as f64,
            };
            *row.slot(m) = Some(v);
        }
        per.insert(dataset.modalities[t].name.clone(), row);
    }
    let mut mean = ModalityMetrics::default();
    for &m in metrics {
        let vals: Vec<f64> = per.values().filter_map(|r| r.get(m)).collect();
        *mean.slot(m) = Some(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    Ok((per, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!("s-score".parse::<Metric>().unwrap(), Metric::SScore);
        assert!("psnr".parse::<Metric>().is_err());
    }

    #[test]
    fn csv_lists_only_selected_metrics() {
        let row = ModalityMetrics { fid: Some(1.5), ..Default::default() };
        let report = MetricsReport {
            per_modality: BTreeMap::from([("M0".to_string(), row.clone())]),
            mean: row,
            config_hash: config_hash(&1),
            checkpoint_path: "x".into(),
            metrics: vec![Metric::Fid],
        };
        assert_eq!(report.to_csv(), "modality,fid\nM0,1.5\nmean,1.5\n");
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["per_modality"]["M0"].as_object().unwrap().len(), 1);
        assert_eq!(report.config_hash.len(), 64);
    }
}
