//! Images, masks, modality labels and datasets.
//!
//! Intensities live in `[-1, 1]`, with `-1` as the background level. Target
//! area images keep the source intensity inside the mask and are `-1`
//! elsewhere.

mod dataset;
mod phantom;
mod sampler;

pub use dataset::{
    load_dataset, read_image_png, read_mask_png, write_image_png, write_mask_png, Dataset,
    DatasetManifest, SampleRecord, Split,
};
pub use phantom::{
    generate_phantom_anatomy, generate_phantom_dataset, read_phantom_spec, Anatomy, PhantomSpec,
    TransferMap,
};
pub use sampler::{sample_training_batch, Batch, BatchItem};

use autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold above the background level for foreground detection.
pub const DEFAULT_FOREGROUND_EPS: f64 = 0.02;

/// Background intensity after normalisation.
pub const BACKGROUND: f64 = -1.0;

/// An imaging domain, identified by a dense index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modality {
    pub id: usize,
    pub name: String,
}

impl Modality {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Self { id, name: name.into() }
    }

    /// `M0`, `M1`, ... for ids `0..n`.
    pub fn default_set(n: usize) -> Vec<Modality> {
        (0..n).map(|i| Modality::new(i, format!("M{i}"))).collect()
    }
}

/// Single-channel image with values in `[-1, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    /// Builds an image; values must already lie in `[-1, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("image value {v} outside [-1, 1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, values: vec![value.clamp(-1.0, 1.0); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.values.clone()).expect("image dims")
    }

    /// Reads a single-channel sample, clamping into `[-1, 1]`.
    pub fn from_tensor(t: &Tensor, sample: usize) -> Self {
        let [_, c, h, w] = t.shape();
        assert_eq!(c, 1, "expected a single-channel tensor");
        let values = t.sample(sample).data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Self { height: h, width: w, values }
    }

    fn same_dims(&self, mask: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (mask.height, mask.width) {
            return Err(Error::Shape(format!(
                "image {}x{} vs mask {}x{}",
                self.height, self.width, mask.height, mask.width
            )));
        }
        Ok(())
    }
}

/// Strictly binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(u8::from(f(r, c)));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] == 1
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.values.iter().zip(&other.values).all(|(&a, &b)| a <= b)
    }

    /// `[1, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| v as f64).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("mask dims")
    }

    /// Thresholds a single-channel sample of a soft mask at 0.5.
    pub fn from_soft(t: &Tensor, sample: usize) -> Self {
        let [_, _, h, w] = t.shape();
        let values = t.sample(sample).data().iter().map(|&v| u8::from(v > 0.5)).collect();
        Self { height: h, width: w, values }
    }
}

/// One training or test example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x: ImageTensor,
    pub y: BinaryMask,
    pub modality: Modality,
    pub split: Split,
}

/// Affine map of `raw` from `[lo, hi]` to `[-1, 1]`; values outside are clamped.
pub fn normalize_intensity(
    height: usize,
    width: usize,
    raw: &[f64],
    lo: f64,
    hi: f64,
) -> Result<ImageTensor> {
    if !(hi > lo) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let values = raw
        .iter()
        .map(|&v| (2.0 * (v.clamp(lo, hi) - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect();
    ImageTensor::new(height, width, values)
}

/// Inverse of [`normalize_intensity`] for a single value.
pub fn denormalize_intensity(v: f64, lo: f64, hi: f64) -> f64 {
    lo + (v + 1.0) * 0.5 * (hi - lo)
}

/// Keeps `x` inside `y` and sets everything else to the background level.
///
/// Equivalent to multiplying by the mask in `[0, 1]` intensity space and
/// mapping back to `[-1, 1]`.
pub fn extract_target_area(x: &ImageTensor, y: &BinaryMask) -> Result<ImageTensor> {
    x.same_dims(y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(&v, &m)| if m == 1 { v } else { BACKGROUND })
        .collect();
    Ok(ImageTensor { height: x.height, width: x.width, values })
}

/// Batched [`extract_target_area`] on `[N, 1, H, W]` tensors.
pub fn extract_target_area_tensor(x: &Tensor, y: &Tensor) -> Tensor {
    x.zip_map(y, |v, m| if m > 0.5 { v } else { BACKGROUND })
}

/// Foreground stencil: 1 where `x > -1 + eps`.
pub fn foreground_binarize(x: &ImageTensor, eps: f64) -> BinaryMask {
    let values = x.values.iter().map(|&v| u8::from(v > BACKGROUND + eps)).collect();
    BinaryMask { height: x.height, width: x.width, values }
}

/// Batched [`foreground_binarize`] producing a 0/1 tensor.
pub fn foreground_binarize_tensor(x: &Tensor, eps: f64) -> Tensor {
    x.map(|v| if v > BACKGROUND + eps { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, v: &[f64]) -> ImageTensor {
        ImageTensor::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let out = normalize_intensity(1, 3, &[0.0, 255.0, 127.5], 0.0, 255.0).unwrap();
        assert_eq!(out.values(), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn normalize_clamps_and_rejects_bad_range() {
        let out = normalize_intensity(1, 2, &[-10.0, 300.0], 0.0, 255.0).unwrap();
        assert_eq!(out.values(), &[-1.0, 1.0]);
        assert!(matches!(
            normalize_intensity(1, 1, &[0.0], 5.0, 5.0),
            Err(Error::InvalidRange { .. })
        ));
    }

    #[test]
    fn target_area_masking_cases() {
        let x = img(2, 2, &[0.5, 0.2, -0.3, 0.9]);
        let ones = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let zeros = BinaryMask::new(2, 2, vec![0; 4]).unwrap();
        let diag = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(extract_target_area(&x, &ones).unwrap(), x);
        assert_eq!(extract_target_area(&x, &zeros).unwrap().values(), &[-1.0; 4]);
        assert_eq!(extract_target_area(&x, &diag).unwrap().values(), &[0.5, -1.0, -1.0, 0.9]);
        let small = BinaryMask::new(1, 2, vec![1, 1]).unwrap();
        assert!(matches!(extract_target_area(&x, &small), Err(Error::Shape(_))));
    }

    #[test]
    fn binarize_cases() {
        let bg = ImageTensor::filled(3, 3, -1.0);
        assert_eq!(foreground_binarize(&bg, DEFAULT_FOREGROUND_EPS).count(), 0);
        let mut v = vec![-1.0; 9];
        v[4] = 0.2;
        let single = foreground_binarize(&img(3, 3, &v), DEFAULT_FOREGROUND_EPS);
        assert_eq!(single.values(), &[0, 0, 0, 0, 1, 0, 0, 0, 0]);
    }

    fn image_and_mask() -> impl Strategy<Value = (ImageTensor, BinaryMask)> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            (
                prop::collection::vec(-1.0f64..=1.0, h * w),
                prop::collection::vec(0u8..=1, h * w),
            )
                .prop_map(move |(v, m)| {
                    (ImageTensor::new(h, w, v).unwrap(), BinaryMask::new(h, w, m).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn extract_is_idempotent((x, y) in image_and_mask()) {
            let once = extract_target_area(&x, &y).unwrap();
            let twice = extract_target_area(&once, &y).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn recovered_mask_never_exceeds_label((x, y) in image_and_mask()) {
            let r = extract_target_area(&x, &y).unwrap();
            prop_assert!(foreground_binarize(&r, DEFAULT_FOREGROUND_EPS).is_subset_of(&y));
        }

        #[test]
        fn normalization_inverts(v in 0.0f64..=255.0) {
            let n = normalize_intensity(1, 1, &[v], 0.0, 255.0).unwrap();
            prop_assert!((denormalize_intensity(n.values()[0], 0.0, 255.0) - v).abs() < 1e-9);
        }
    }
}
