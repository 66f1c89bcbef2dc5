//! Random training batches with uniformly drawn target modalities.

use autograd::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{extract_target_area_tensor, Dataset};

/// One drawn element: a training sample index and its target modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub sample: usize,
    pub source: usize,
    pub target: usize,
}

/// Stacked batch tensors, all `[B, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub items: Vec<BatchItem>,
    pub x_s: Tensor,
    pub y: Tensor,
    pub r_s: Tensor,
}

impl Batch {
    pub fn from_items(dataset: &Dataset, items: Vec<BatchItem>) -> Self {
        let xs: Vec<Tensor> = items.iter().map(|i| dataset.samples[i.sample].x.to_tensor()).collect();
        let ys: Vec<Tensor> = items.iter().map(|i| dataset.samples[i.sample].y.to_tensor()).collect();
        let x_s = Tensor::stack(&xs).expect("uniform resolution");
        let y = Tensor::stack(&ys).expect("uniform resolution");
        let r_s = extract_target_area_tensor(&x_s, &y);
        Self { items, x_s, y, r_s }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.source).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.target).collect()
    }
}

/// Draws `batch_size` training samples with replacement, each paired with an
/// independent uniform target modality (the source modality included).
pub fn sample_training_batch(dataset: &Dataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Batch {
    let train = dataset.train_indices();
    assert!(!train.is_empty(), "dataset has no training samples");
    let n = dataset.n_modalities();
    let items = (0..batch_size)
        .map(|_| {
            let sample = train[rng.gen_range(0..train.len())];
            let target = rng.gen_range(0..n);
            BatchItem { sample, source: dataset.samples[sample].modality.id, target }
        })
        .collect();
    Batch::from_items(dataset, items)
}
