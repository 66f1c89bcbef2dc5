//! Overlap metrics and the small reference segmenter behind the S-score.

use std::collections::BTreeMap;
use std::path::Path;

use autograd::optim::Adam;
use autograd::{grad, no_grad, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{BinaryMask, Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::networks::layers::UNet;
use crate::networks::Module;
use crate::tensorfile::{self, insert_module, restore_module};

/// `2|a ∩ b| / (|a| + |b|)`, and 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    assert_eq!((a.height(), a.width()), (b.height(), b.width()), "dice on masks of different size");
    let inter = a.values().iter().zip(b.values()).filter(|(&x, &y)| x == 1 && y == 1).count();
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Relative absolute volume difference in percent: `100 * ||pred| - |ref|| / |ref|`.
pub fn ravd(reference: &BinaryMask, prediction: &BinaryMask) -> Result<f64> {
    let r = reference.count();
    if r == 0 {
        return Err(Error::UndefinedMetric("RAVD with an empty reference mask".into()));
    }
    Ok(100.0 * (prediction.count() as f64 - r as f64).abs() / r as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub dice: f64,
    /// Percent.
    pub ravd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once validation DICE reaches this value; `None` trains for
    /// `max_steps`.
    pub target_dice: Option<f64>,
    pub eval_every: usize,
    /// Trailing fraction of the training samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            depth: 2,
            lr: 1e-3,
            batch_size: 4,
            max_steps: 2000,
            target_dice: Some(0.85),
            eval_every: 25,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Trained segmenter and how it got there.
#[derive(Clone, Debug)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub in_channels: usize,
    /// Modality of the images it was trained on, if single-modality.
    pub modality: Option<String>,
    pub net: UNet,
    pub steps: usize,
    pub val_dice: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SegmenterConfig,
    in_channels: usize,
    modality: Option<String>,
    steps: usize,
    val_dice: f64,
}

/// `1 - (2 sum(p y) + 1) / (sum(p) + sum(y) + 1)`, averaged over the batch.
pub fn soft_dice_loss(p: &Var, y: &Tensor) -> Var {
    let [n, ..] = p.shape();
    let inter = p.mul_const(y).sum_to([n, 1, 1, 1]).scale(2.0).add_scalar(1.0);
    let ysum = Tensor::from_fn([n, 1, 1, 1], |[i, ..]| y.sample(i).sum());
    let denom = p.sum_to([n, 1, 1, 1]).add(&Var::constant(ysum)).add_scalar(1.0);
    inter.div(&denom).neg().add_scalar(1.0).mean()
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, in_channels: usize) -> Result<Self> {
        if config.base_channels == 0 || config.depth == 0 || config.batch_size == 0 {
            return Err(Error::Config("segmenter needs positive width, depth and batch size".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = UNet::new(in_channels, config.base_channels, config.depth, &mut rng);
        Ok(Self { config, in_channels, modality: None, net, steps: 0, val_dice: 0.0 })
    }

    /// Thresholded predictions for `[N, C, H, W]` inputs.
    pub fn predict(&self, inputs: &Tensor) -> Vec<BinaryMask> {
        let [n, c, ..] = inputs.shape();
        assert_eq!(c, self.in_channels, "segmenter input channels");
        let probs = no_grad(|| self.net.forward(&Var::constant(inputs.clone())).value().clone());
        (0..n).map(|i| BinaryMask::from_soft(&probs, i)).collect()
    }

    pub fn predict_images(&self, images: &[ImageTensor]) -> Vec<BinaryMask> {
        images
            .chunks(16)
            .flat_map(|c| {
                let t = Tensor::stack(&c.iter().map(ImageTensor::to_tensor).collect::<Vec<_>>()).expect("one resolution");
                self.predict(&t)
            })
            .collect()
    }

    /// Mean DICE and RAVD against reference masks.
    pub fn evaluate(&self, inputs: &[Tensor], masks: &[BinaryMask]) -> Result<SegMetrics> {
        let mut preds = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(16) {
            preds.extend(self.predict(&Tensor::stack(chunk)?));
        }
        mean_metrics(&preds, masks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = BTreeMap::new();
        insert_module(&mut arrays, &self.net, "seg");
        let header = Header {
            config: self.config.clone(),
            in_channels: self.in_channels,
            modality: self.modality.clone(),
            steps: self.steps,
            val_dice: self.val_dice,
        };
        tensorfile::write(path, &arrays, serde_json::to_string(&header).expect("header serialises"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (arrays, header) = tensorfile::read(path)?;
        let h: Header = serde_json::from_str(&header)
            .map_err(|e| Error::Checkpoint(format!("{}: bad segmenter header: {e}", path.display())))?;
        let mut seg = Segmenter::new(h.config, h.in_channels)?;
        restore_module(&mut seg.net, "seg", &arrays)?;
        seg.modality = h.modality;
        seg.steps = h.steps;
        seg.val_dice = h.val_dice;
        Ok(seg)
    }
}

fn mean_metrics(preds: &[BinaryMask], masks: &[BinaryMask]) -> Result<SegMetrics> {
    if preds.is_empty() || preds.len() != masks.len() {
        return Err(Error::UndefinedMetric(format!("{} predictions for {} masks", preds.len(), masks.len())));
    }
    let n = preds.len() as f64;
    let mut out = SegMetrics::default();
    for (p, m) in preds.iter().zip(masks) {
        out.dice += dice(p, m) / n;
        out.ravd += ravd(m, p)? / n;
    }
    Ok(out)
}

/// Supervised soft-dice training on `[1, C, H, W]` inputs. The trailing
/// `val_fraction` of the samples is held out for early stopping.
pub fn train_segmenter(inputs: &[Tensor], masks: &[BinaryMask], config: &SegmenterConfig) -> Result<Segmenter> {
    if inputs.len() != masks.len() || inputs.len() < 2 {
        return Err(Error::Config("segmenter training needs at least two image/mask pairs".into()));
    }
    let in_channels = inputs[0].shape()[1];
    let mut seg = Segmenter::new(config.clone(), in_channels)?;
    let n_val = ((inputs.len() as f64 * config.val_fraction).ceil() as usize).clamp(1, inputs.len() - 1);
    let n_train = inputs.len() - n_val;
    let (val_x, val_y) = (&inputs[n_train..], &masks[n_train..]);
    let targets: Vec<Tensor> = masks.iter().map(BinaryMask::to_tensor).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut opt = Adam::new(config.lr, 0.9, 0.999);
    for step in 1..=config.max_steps {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.gen_range(0..n_train)).collect();
        let x = Tensor::stack(&idx.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>())?;
        let y = Tensor::stack(&idx.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>())?;
        let loss = soft_dice_loss(&seg.net.forward(&Var::constant(x)), &y);
        let mut params = Vec::new();
        seg.net.visit("", &mut |n, v| params.push((n.to_string(), v.clone())));
        let refs: Vec<&Var> = params.iter().map(|(_, v)| v).collect();
        let grads = grad(&loss, &refs, false);
        if !loss.item().is_finite() {
            return Err(Error::NonFinite { step: step as u64, detail: "segmenter loss".into() });
        }
        opt.begin_step();
        let mut i = 0;
        seg.net.visit_mut("", &mut |name, v| {
            *v = Var::param(opt.update(name, v.value(), grads[i].value()));
            i += 1;
        });
        seg.steps = step;
        if step % config.eval_every == 0 || step == config.max_steps {
            seg.val_dice = seg.evaluate(val_x, val_y)?.dice;
            if config.target_dice.is_some_and(|t| seg.val_dice >= t) {
                break;
            }
        }
    }
    Ok(seg)
}

/// Segmenter trained on the real training images of one modality.
pub fn train_reference_segmenter(dataset: &Dataset, modality: usize, config: &SegmenterConfig) -> Result<Segmenter> {
    let samples: Vec<_> = dataset.split(Split::Train, Some(modality)).collect();
    let inputs: Vec<Tensor> = samples.iter().map(|s| s.x.to_tensor()).collect();
    let masks: Vec<BinaryMask> = samples.iter().map(|s| s.y.clone()).collect();
    let mut seg = train_segmenter(&inputs, &masks, config)?;
    seg.modality = dataset.modalities.get(modality).map(|m| m.name.clone());
    Ok(seg)
}

/// Mean DICE x 100 between the segmenter's predictions on translated images
/// and the masks of their source samples.
pub fn compute_s_score(segmenter: &Segmenter, translated: &[ImageTensor], source_masks: &[BinaryMask]) -> Result<f64> {
    if translated.is_empty() || translated.len() != source_masks.len() {
        return Err(Error::UndefinedMetric(format!(
            "S-score over {} images and {} masks",
            translated.len(),
            source_masks.len()
        )));
    }
    let preds = segmenter.predict_images(translated);
    Ok(100.0 * preds.iter().zip(source_masks).map(|(p, m)| dice(p, m)).sum::<f64>() / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::new(bits.len() / w, w, bits.to_vec()).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = mask(&[1, 1, 1, 1, 0, 0, 0, 0], 4);
        let b = mask(&[0, 0, 1, 1, 1, 1, 0, 0], 4);
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(dice(&a, &b), 0.5);
        assert_eq!(dice(&a, &b), dice(&b, &a));
        let c = mask(&[0, 0, 0, 0, 0, 0, 1, 1], 4);
        assert_eq!(dice(&a, &c), 0.0);
        let empty = mask(&[0; 8], 4);
        assert_eq!(dice(&empty, &empty), 1.0);
    }

    #[test]
    fn ravd_cases() {
        let ten = BinaryMask::from_fn(4, 4, |r, c| r * 4 + c < 10);
        let twelve = BinaryMask::from_fn(4, 4, |r, c| r * 4 + c < 12);
        assert_eq!(ravd(&ten, &ten).unwrap(), 0.0);
        assert!((ravd(&ten, &twelve).unwrap() - 20.0).abs() < 1e-12);
        assert!((ravd(&twelve, &ten).unwrap() - 100.0 * 2.0 / 12.0).abs() < 1e-12);
        assert!(ravd(&BinaryMask::from_fn(4, 4, |_, _| false), &ten).is_err());
    }

    #[test]
    fn soft_dice_of_perfect_prediction_is_near_zero() {
        let y = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let loss = soft_dice_loss(&Var::constant(y.clone()), &y).item();
        assert!(loss.abs() < 1e-12);
        let wrong = soft_dice_loss(&Var::constant(y.map(|v| 1.0 - v)), &y).item();
        assert!((wrong - (1.0 - 1.0 / 5.0)).abs() < 1e-12);
    }
}
