//! Ground-truth translation error on phantoms and the enrichment experiment.

use autograd::{no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::segmentation::{train_segmenter, SegMetrics, SegmenterConfig};
use crate::data_model::{BinaryMask, Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::networks::Generator;

/// Whole-image translation of every image to one target modality.
pub fn translate_images(g: &Generator, images: &[ImageTensor], target: usize) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        let x = Tensor::stack(&chunk.iter().map(ImageTensor::to_tensor).collect::<Vec<_>>())?;
        let y = no_grad(|| g.translate(&Var::constant(x), &vec![target; chunk.len()]))?;
        out.extend((0..chunk.len()).map(|i| ImageTensor::from_tensor(y.value(), i)));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslationError {
    /// Mean absolute error over all pixels.
    pub whole_l1: f64,
    /// Mean absolute error inside the target mask.
    pub target_l1: f64,
}

/// Error of `G(x_s, t)` against the modality-`t` rendering of the same
/// anatomy, over the test samples of modality `s`.
pub fn phantom_translation_error(g: &Generator, dataset: &Dataset, s: usize, t: usize) -> Result<TranslationError> {
    let pairs: Vec<_> = dataset
        .split(Split::Test, Some(s))
        .filter_map(|smp| dataset.counterpart(&smp.id, t).map(|gt| (smp, gt)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric(format!("no test anatomies rendered in both modality {s} and {t}")));
    }
    let inputs: Vec<ImageTensor> = pairs.iter().map(|(smp, _)| smp.x.clone()).collect();
    let outputs = translate_images(g, &inputs, t)?;
    let (mut whole, mut n_whole, mut target, mut n_target) = (0.0, 0usize, 0.0, 0usize);
    for ((smp, gt), out) in pairs.iter().zip(&outputs) {
        for ((&a, &b), &m) in out.values().iter().zip(gt.x.values()).zip(smp.y.values()) {
            let e = (a - b).abs();
            whole += e;
            n_whole += 1;
            if m == 1 {
                target += e;
                n_target += 1;
            }
        }
    }
    if n_target == 0 {
        return Err(Error::UndefinedMetric("target masks of the test samples are empty".into()));
    }
    Ok(TranslationError { whole_l1: whole / n_whole as f64, target_l1: target / n_target as f64 })
}

/// `[1, 1 + k, H, W]` stack: the real image, then the synthetic images in
/// ascending modality order.
pub fn enrichment_concat(real: &ImageTensor, synthetic_others: &[(usize, ImageTensor)]) -> Result<Tensor> {
    let mut others: Vec<&(usize, ImageTensor)> = synthetic_others.iter().collect();
    others.sort_by_key(|(m, _)| *m);
    let mut channels = vec![real.to_tensor()];
    for (_, img) in others {
        if (img.height(), img.width()) != (real.height(), real.width()) {
            return Err(Error::Shape("enrichment channels must share the real image's size".into()));
        }
        channels.push(img.to_tensor());
    }
    let (h, w) = (real.height(), real.width());
    let c = channels.len();
    Ok(Tensor::from_fn([1, c, h, w], |[_, ci, r, col]| channels[ci].get([0, 0, r, col])))
}

/// Every image of modality `m` enriched with its translations to all other
/// modalities.
pub fn enrich_images(g: &Generator, images: &[ImageTensor], m: usize, n_modalities: usize) -> Result<Vec<Tensor>> {
    let mut synthetic: Vec<(usize, Vec<ImageTensor>)> = Vec::new();
    for t in (0..n_modalities).filter(|&t| t != m) {
        synthetic.push((t, translate_images(g, images, t)?));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let others: Vec<(usize, ImageTensor)> = synthetic.iter().map(|(t, imgs)| (*t, imgs[i].clone())).collect();
            enrichment_concat(x, &others)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResult {
    /// Segmenter trained and tested on the real channel only.
    pub single: SegMetrics,
    /// Segmenter trained and tested on the real channel plus synthetic ones.
    pub enriched: SegMetrics,
}

/// Trains two segmenters with the same configuration on modality `m`, one on
/// real images and one on enriched stacks, and scores both on the test split.
pub fn run_enrichment(g: &Generator, dataset: &Dataset, m: usize, config: &SegmenterConfig) -> Result<EnrichmentResult> {
    let n = dataset.n_modalities();
    let collect = |split| {
        let s: Vec<_> = dataset.split(split, Some(m)).collect();
        (s.iter().map(|s| s.x.clone()).collect::<Vec<_>>(), s.iter().map(|s| s.y.clone()).collect::<Vec<BinaryMask>>())
    };
    let (train_x, train_y) = collect(Split::Train);
    let (test_x, test_y) = collect(Split::Test);
    let single_train: Vec<Tensor> = train_x.iter().map(ImageTensor::to_tensor).collect();
    let single_test: Vec<Tensor> = test_x.iter().map(ImageTensor::to_tensor).collect();
    let single = train_segmenter(&single_train, &train_y, config)?.evaluate(&single_test, &test_y)?;
    let rich_train = enrich_images(g, &train_x, m, n)?;
    let rich_test = enrich_images(g, &test_x, m, n)?;
    let enriched = train_segmenter(&rich_train, &train_y, config)?.evaluate(&rich_test, &test_y)?;
    Ok(EnrichmentResult { single, enriched })
}
