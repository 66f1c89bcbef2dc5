//! Fréchet distance between Gaussian fits of image embeddings.

use autograd::{no_grad, Tensor, Var};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_model::ImageTensor;
use crate::error::{Error, Result};
use crate::networks::layers::{Activation, Conv2d};

/// Symmetric PSD square root with negative eigenvalues clipped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu1 - mu2|^2 + tr(c1 + c2 - 2 (c1 c2)^(1/2))`.
///
/// The cross term uses `tr((c1^(1/2) c2 c1^(1/2))^(1/2))`, which equals
/// `tr((c1 c2)^(1/2))` and only needs symmetric eigendecompositions.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::Shape(format!(
            "frechet distance: means {} / {}, covariances {:?} / {:?}",
            d,
            mu2.len(),
            cov1.shape(),
            cov2.shape()
        )));
    }
    let s1 = psd_sqrt(cov1);
    let cross = psd_sqrt(&(&s1 * cov2 * &s1));
    let diff = mu1 - mu2;
    Ok(diff.dot(&diff) + cov1.trace() + cov2.trace() - 2.0 * cross.trace())
}

/// Sample mean and unbiased covariance of row vectors.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let denom = n.saturating_sub(1).max(1) as f64;
    let cov = centred.transpose() * &centred / denom;
    (mu, cov)
}

/// Fixed random convolutional features: three stride-2 3x3 convolutions with
/// leaky ReLU, then a global spatial mean per channel.
#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    pub seed: u64,
    layers: Vec<Conv2d>,
}

impl FeatureEmbedder {
    pub const DEFAULT_SEED: u64 = 0x5EED_F1D;
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [1, (dim / 4).max(1), (dim / 2).max(1), dim];
        let layers = widths
            .windows(2)
            .map(|w| Conv2d::new(w[0], w[1], 3, 2, 1, 2.0, &mut rng))
            .collect();
        Self { seed, layers }
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, Conv2d::out_channels)
    }

    /// One `dim`-vector per image.
    pub fn embed(&self, images: &[ImageTensor]) -> Vec<Vec<f64>> {
        let d = self.dim();
        images
            .chunks(16)
            .flat_map(|chunk| {
                let batch = Tensor::stack(&chunk.iter().map(ImageTensor::to_tensor).collect::<Vec<_>>())
                    .expect("images share one resolution");
                let feats = no_grad(|| {
                    let h = self
                        .layers
                        .iter()
                        .fold(Var::constant(batch), |h, l| Activation::LeakyRelu.apply(&l.forward(&h)));
                    h.mean_to([chunk.len(), d, 1, 1]).value().clone()
                });
                (0..chunk.len()).map(move |i| (0..d).map(|c| feats.get([i, c, 0, 0])).collect::<Vec<_>>()).collect::<Vec<_>>()
            })
            .collect()
    }
}

impl Default for FeatureEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED, Self::DEFAULT_DIM)
    }
}

/// Fréchet distance between the embeddings of two image sets. A ridge of
/// `1e-6` is added to both covariances when either set has at most `d`
/// images.
pub fn compute_fid(embedder: &FeatureEmbedder, real: &[ImageTensor], fake: &[ImageTensor]) -> Result<f64> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::UndefinedMetric("FID needs at least two images per set".into()));
    }
    let (mu1, mut c1) = gaussian_fit(&embedder.embed(real));
    let (mu2, mut c2) = gaussian_fit(&embedder.embed(fake));
    let d = embedder.dim();
    if real.len() <= d || fake.len() <= d {
        let ridge = DMatrix::identity(d, d) * 1e-6;
        c1 += &ridge;
        c2 += &ridge;
    }
    frechet_distance(&mu1, &c1, &mu2, &c2)
}
