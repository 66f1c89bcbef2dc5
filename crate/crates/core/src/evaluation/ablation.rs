//! Component ablation: trains each variant from scratch per seed and scores
//! it with the reference segmenters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segmentation::{compute_s_score, Segmenter};
use super::translation::{phantom_translation_error, translate_images};
use crate::data_model::{BinaryMask, Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::training::{iterations_per_epoch, train_with, TrainConfig, TrainerState, Variant};

/// The six rows of the ablation table, from the plain baseline to the full
/// model. Variants with the crossing loss but without the target stream do
/// not exist.
pub fn ablation_variants() -> [Variant; 6] {
    let v = |s, t, c| Variant { use_shape_controller: s, use_target_stream: t, use_crossing: c };
    [
        v(false, false, false),
        v(false, true, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, true),
        v(true, true, true),
    ]
}

/// One trained variant/seed pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    /// S-score per target modality, in modality order.
    pub s_scores: Vec<f64>,
    pub mean_s_score: f64,
    /// Phantom error averaged over all ordered modality pairs `s != t`.
    pub whole_l1: f64,
    pub target_l1: f64,
    /// Mean crossing loss over the first and the last epoch (0 without the
    /// target stream).
    pub cross_first_epoch: f64,
    pub cross_last_epoch: f64,
    /// Generator used for scoring (EMA parameters).
    #[serde(skip)]
    pub generator: Option<Generator>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub modalities: Vec<String>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    /// Runs of one variant, in seed order.
    pub fn runs_of(&self, v: Variant) -> Vec<&AblationRun> {
        self.runs.iter().filter(|r| r.variant == v).collect()
    }

    /// Variants in first-appearance order.
    pub fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant);
            }
        }
        out
    }

    /// Seed-averaged S-scores: one row per variant, one column per modality
    /// plus the mean.
    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,{},mean\n", self.modalities.join(","));
        for v in self.variants() {
            let runs = self.runs_of(v);
            let k = runs.len() as f64;
            out.push_str(&v.label().replace(", ", " "));
            for m in 0..self.modalities.len() {
                out.push_str(&format!(",{:.2}", runs.iter().map(|r| r.s_scores[m]).sum::<f64>() / k));
            }
            out.push_str(&format!(",{:.2}\n", runs.iter().map(|r| r.mean_s_score).sum::<f64>() / k));
        }
        out
    }
}

/// S-score of `g` for every target modality.
pub fn s_scores(g: &Generator, dataset: &Dataset, segmenters: &BTreeMap<usize, Segmenter>) -> Result<Vec<f64>> {
    let n = dataset.n_modalities();
    (0..n)
        .map(|t| {
            let seg = segmenters.get(&t).ok_or_else(|| {
                Error::Config(format!(
                    "no reference segmenter for modality {}; run `targan train-segmenter` first",
                    dataset.modalities[t].name
                ))
            })?;
            let mut fake = Vec::new();
            let mut masks: Vec<BinaryMask> = Vec::new();
            for s in (0..n).filter(|&s| s != t) {
                let src: Vec<_> = dataset.split(Split::Test, Some(s)).collect();
                let imgs: Vec<ImageTensor> = src.iter().map(|x| x.x.clone()).collect();
                fake.extend(translate_images(g, &imgs, t)?);
                masks.extend(src.iter().map(|x| x.y.clone()));
            }
            compute_s_score(seg, &fake, &masks)
        })
        .collect()
}

/// Trains every variant once per seed from `base` and scores it. All
/// variants are validated before any training starts. With `out_dir`, each
/// run writes its artifacts to `<out_dir>/<variant>/seed_<seed>`.
pub fn run_ablation(
    variants: &[Variant],
    base: &TrainConfig,
    dataset: &Dataset,
    seeds: &[u64],
    segmenters: &BTreeMap<usize, Segmenter>,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationTable> {
    for v in variants {
        v.validate()?;
    }
    let n = dataset.n_modalities();
    if let Some(t) = (0..n).find(|t| !segmenters.contains_key(t)) {
        return Err(Error::Config(format!(
            "no reference segmenter for modality {}; run `targan train-segmenter` first",
            dataset.modalities[t].name
        )));
    }
    let ipe = iterations_per_epoch(dataset.train_indices().len(), base.batch_size);
    let mut runs = Vec::new();
    for &v in variants {
        for &seed in seeds {
            let config = TrainConfig { variant: v, seed, ..base.clone() };
            let dir = out_dir.map(|d| d.join(v.slug()).join(format!("seed_{seed}")));
            if let Some(d) = &dir {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let text = serde_json::to_string_pretty(&config).expect("config serialises");
                std::fs::write(d.join("config.json"), text).map_err(|e| Error::io(d, e))?;
            }
            let label = v.label();
            let state = TrainerState::new(config, n)?;
            let outcome = train_with(state, dataset, dir.as_deref(), &mut |l| progress(&format!("{label} seed {seed}: {l}")))?;
            let g = outcome.state.inference_generator(true).clone();
            let scores = s_scores(&g, dataset, segmenters)?;
            let mut errs = Vec::new();
            for s in 0..n {
                for t in (0..n).filter(|&t| t != s) {
                    errs.push(phantom_translation_error(&g, dataset, s, t)?);
                }
            }
            let cross = outcome.epoch_means(ipe, |r| r.cross);
            let k = errs.len() as f64;
            runs.push(AblationRun {
                variant: v,
                seed,
                mean_s_score: scores.iter().sum::<f64>() / scores.len() as f64,
                s_scores: scores,
                whole_l1: errs.iter().map(|e| e.whole_l1).sum::<f64>() / k,
                target_l1: errs.iter().map(|e| e.target_l1).sum::<f64>() / k,
                cross_first_epoch: cross.first().copied().unwrap_or(0.0),
                cross_last_epoch: cross.last().copied().unwrap_or(0.0),
                generator: Some(g),
            });
        }
    }
    Ok(AblationTable { modalities: dataset.modalities.iter().map(|m| m.name.clone()).collect(), runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_legal_distinct_variants() {
        let vs = ablation_variants();
        assert!(vs.iter().all(|v| v.validate().is_ok()));
        let labels: Vec<String> = vs.iter().map(Variant::label).collect();
        assert_eq!(labels[0], "TarGAN w/o S, T, C");
        assert_eq!(labels[5], "TarGAN");
        let mut dedup = labels.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 6);
    }
}
