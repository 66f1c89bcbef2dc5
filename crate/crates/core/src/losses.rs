//! Training objectives.
//!
//! Every pixel-wise loss is a mean over pixels and batch. The adversarial
//! terms use the Wasserstein form with a gradient penalty: critics emit raw
//! scores and the penalty pushes the critic's input-gradient norm towards 1.

use autograd::{grad, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::BACKGROUND;
use crate::error::{Error, Result};

/// Relative weights of the objective terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls_r: f64,
    pub lambda_cls_f: f64,
    pub lambda_rec: f64,
    pub lambda_cross: f64,
    pub lambda_u: f64,
    pub lambda_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls_r: 1.0,
            lambda_cls_f: 1.0,
            lambda_rec: 1.0,
            lambda_cross: 50.0,
            lambda_u: 0.01,
            lambda_gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cls_r,
            self.lambda_cls_f,
            self.lambda_rec,
            self.lambda_cross,
            self.lambda_u,
            self.lambda_gp,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Scalar values of every objective term for one training step.
///
/// `critic_x`/`critic_r` hold the critics' Wasserstein loss
/// (`mean(fake) - mean(real)`); `adv_x`/`adv_r` the generator's adversarial
/// term (`-mean(fake)`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic_x: f64,
    pub critic_r: f64,
    pub adv_x: f64,
    pub adv_r: f64,
    pub gp_x: f64,
    pub gp_r: f64,
    pub cls_r_x: f64,
    pub cls_r_r: f64,
    pub cls_f_x: f64,
    pub cls_f_r: f64,
    pub shape_x: f64,
    pub shape_r: f64,
    pub rec_x: f64,
    pub rec_r: f64,
    pub cross: f64,
    pub total_d_x: f64,
    pub total_d_r: f64,
    pub total_g: f64,
    pub total_gs: f64,
}

/// Column header of the per-step loss CSV.
pub const LOSS_CSV_HEADER: &str = "step,adv_x,adv_r,gp_x,gp_r,cls_r_x,cls_r_r,cls_f_x,cls_f_r,\
shape_x,shape_r,rec_x,rec_r,cross,total_Dx,total_Dr,total_G,total_GS";

impl LossReport {
    fn csv_values(&self) -> [f64; 17] {
        [
            self.adv_x,
            self.adv_r,
            self.gp_x,
            self.gp_r,
            self.cls_r_x,
            self.cls_r_r,
            self.cls_f_x,
            self.cls_f_r,
            self.shape_x,
            self.shape_r,
            self.rec_x,
            self.rec_r,
            self.cross,
            self.total_d_x,
            self.total_d_r,
            self.total_g,
            self.total_gs,
        ]
    }

    /// One CSV row; values use Rust's shortest round-trip formatting.
    pub fn csv_row(&self, step: u64) -> String {
        let mut row = step.to_string();
        for v in self.csv_values() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row
    }

    pub fn all_finite(&self) -> bool {
        self.csv_values().iter().chain([&self.critic_x, &self.critic_r]).all(|v| v.is_finite())
    }

    /// Copies the discriminator-step fields of `d` into `self`.
    pub fn merge_discriminator(&mut self, d: &LossReport) {
        self.critic_x = d.critic_x;
        self.critic_r = d.critic_r;
        self.gp_x = d.gp_x;
        self.gp_r = d.gp_r;
        self.cls_r_x = d.cls_r_x;
        self.cls_r_r = d.cls_r_r;
        self.total_d_x = d.total_d_x;
        self.total_d_r = d.total_d_r;
    }

    pub fn describe(&self) -> String {
        format!(
            "critic_x={} critic_r={} adv_x={} adv_r={} gp_x={} gp_r={} cls_r_x={} cls_r_r={} \
             cls_f_x={} cls_f_r={} shape_x={} shape_r={} rec_x={} rec_r={} cross={}",
            self.critic_x,
            self.critic_r,
            self.adv_x,
            self.adv_r,
            self.gp_x,
            self.gp_r,
            self.cls_r_x,
            self.cls_r_r,
            self.cls_f_x,
            self.cls_f_r,
            self.shape_x,
            self.shape_r,
            self.rec_x,
            self.rec_r,
            self.cross
        )
    }
}

/// Wasserstein critic loss `mean(fake) - mean(real)`.
pub fn critic_loss(real_scores: &Var, fake_scores: &Var) -> Var {
    fake_scores.mean().sub(&real_scores.mean())
}

/// Generator adversarial loss `-mean(fake)`.
pub fn generator_adv_loss(fake_scores: &Var) -> Var {
    fake_scores.mean().neg()
}

/// Mean over the batch of `(||d/dx mean_patch(critic(x))||_2 - 1)^2`, at
/// points drawn uniformly on the segments between paired real and fake
/// samples. The result is differentiable with respect to the critic's
/// parameters.
pub fn gradient_penalty(
    critic: impl Fn(&Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "gradient penalty: real {:?} vs fake {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let [n, c, h, w] = real.shape();
    let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mix = Tensor::from_fn([n, c, h, w], |[i, ..]| u[i]);
    let interp = real.zip_map(&mix, |r, a| a * r).zip_map(&fake.zip_map(&mix, |f, a| (1.0 - a) * f), |a, b| a + b);
    let x_hat = Var::param(interp);
    let scores = critic(&x_hat);
    let per_sample = scores.mean_to([n, 1, 1, 1]).sum();
    let g = grad(&per_sample, &[&x_hat], true).remove(0);
    if !g.value().all_finite() {
        return Err(Error::NonFinite {
            step: 0,
            detail: "critic input gradient in gradient penalty".into(),
        });
    }
    let norms = g.square().sum_to([n, 1, 1, 1]).add_scalar(1e-12).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean())
}

fn check_labels(logits: &Var, labels: &[usize]) {
    let [n, k, h, w] = logits.shape();
    assert_eq!((h, w), (1, 1), "classification logits must be [N, K, 1, 1]");
    assert_eq!(labels.len(), n, "one label per sample");
    assert!(labels.iter().all(|&l| l < k), "label out of range for {k} classes");
}

/// Mean cross-entropy of `[N, K, 1, 1]` logits against class indices.
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Var {
    check_labels(logits, labels);
    let [n, k, _, _] = logits.shape();
    let onehot = Tensor::from_fn([n, k, 1, 1], |[i, c, ..]| f64::from(u8::from(labels[i] == c)));
    logits.log_softmax_channels().mul_const(&onehot).sum().scale(-1.0 / n as f64)
}

/// Critic classification loss with the untraceable term: real images must be
/// classified as their modality `s`, translated images as "fake from source
/// `s`", i.e. class `n + s`.
pub fn cls_loss_real(
    logits_real: &Var,
    s: &[usize],
    logits_fake: &Var,
    s_prime: &[usize],
    lambda_u: f64,
) -> Var {
    let n = logits_real.shape()[1] / 2;
    assert!(s.iter().all(|&v| v < n), "real labels must be real categories");
    assert!(s_prime.iter().all(|&v| v >= n), "fake labels must be fake categories");
    let real = cross_entropy(logits_real, s);
    if lambda_u == 0.0 {
        return real;
    }
    real.add(&cross_entropy(logits_fake, s_prime).scale(lambda_u))
}

/// "Fake from source `s`" labels for the untraceable term.
pub fn untraceable_labels(sources: &[usize], n_modalities: usize) -> Vec<usize> {
    sources.iter().map(|&s| n_modalities + s).collect()
}

/// Generator classification loss: translated images should pass as real
/// images of the target modality.
pub fn cls_loss_fake(logits_fake: &Var, t: &[usize]) -> Var {
    let n = logits_fake.shape()[1] / 2;
    assert!(t.iter().all(|&v| v < n), "target labels must be real categories");
    cross_entropy(logits_fake, t)
}

/// Mean squared error between a soft mask and a binary stencil.
pub fn shape_consistency_loss(s_out: &Var, b: &Tensor) -> Var {
    assert_eq!(s_out.shape(), b.shape(), "shape loss dims");
    s_out.sub(&Var::constant(b.clone())).square().mean()
}

/// Mean absolute error between a reconstruction and the original.
pub fn reconstruction_loss(x_rec: &Var, x_orig: &Var) -> Var {
    assert_eq!(x_rec.shape(), x_orig.shape(), "reconstruction dims");
    x_rec.sub(x_orig).abs().mean()
}

/// `x` inside `y`, background level elsewhere (differentiable in `x`).
pub fn mask_to_target(x: &Var, y: &Tensor) -> Var {
    let background = y.map(|m| (1.0 - m) * BACKGROUND);
    x.mul_const(y).add(&Var::constant(background))
}

/// Mean absolute difference between the masked whole-image translation and
/// the target-area translation.
pub fn crossing_loss(x_t: &Var, y: &Tensor, r_t: &Var) -> Var {
    assert_eq!(x_t.shape(), r_t.shape(), "crossing loss dims");
    mask_to_target(x_t, y).sub(r_t).abs().mean()
}

/// Critic objective: `critic + lambda_gp * gp + lambda_cls_r * cls_real`.
pub fn total_d_loss<T>(critic: T, gp: T, cls_real: T, w: &LossWeights) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    critic + gp * w.lambda_gp + cls_real * w.lambda_cls_r
}

/// Per-stream generator terms.
pub struct StreamTerms<T> {
    pub adv: T,
    pub cls_fake: T,
    pub rec: T,
}

/// Generator objective: both streams' `adv + lambda_cls_f * cls_fake +
/// lambda_rec * rec`, summed, plus `lambda_cross * crossing`.
pub fn total_g_loss<T>(streams: Vec<StreamTerms<T>>, crossing: T, w: &LossWeights) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut total = crossing * w.lambda_cross;
    for s in streams {
        total = total + s.adv + s.cls_fake * w.lambda_cls_f + s.rec * w.lambda_rec;
    }
    total
}

/// Joint generator/shape-controller objective.
pub fn total_gs_loss<T: std::ops::Add<Output = T>>(shape_x: T, shape_r: T) -> T {
    shape_x + shape_r
}

impl LossReport {
    pub fn recomputed_total_d_x(&self, w: &LossWeights) -> f64 {
        total_d_loss(self.critic_x, self.gp_x, self.cls_r_x, w)
    }

    pub fn recomputed_total_d_r(&self, w: &LossWeights) -> f64 {
        total_d_loss(self.critic_r, self.gp_r, self.cls_r_r, w)
    }

    pub fn recomputed_total_g(&self, w: &LossWeights) -> f64 {
        total_g_loss(
            vec![
                StreamTerms { adv: self.adv_x, cls_fake: self.cls_f_x, rec: self.rec_x },
                StreamTerms { adv: self.adv_r, cls_fake: self.cls_f_r, rec: self.rec_r },
            ],
            self.cross,
            w,
        )
    }

    pub fn recomputed_total_gs(&self) -> f64 {
        total_gs_loss(self.shape_x, self.shape_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn var(shape: [usize; 4], v: &[f64]) -> Var {
        Var::param(Tensor::new(shape, v.to_vec()).unwrap())
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * b.abs().max(1.0)
    }

    #[test]
    fn adversarial_cases() {
        let real = Var::constant(Tensor::ones([2, 1, 2, 2]));
        let fake = Var::constant(Tensor::zeros([2, 1, 2, 2]));
        assert!(close(critic_loss(&real, &fake).item(), -1.0));
        assert!(close(critic_loss(&real, &real).item(), 0.0));
        assert!(close(generator_adv_loss(&Var::constant(Tensor::full([2, 1, 2, 2], 2.5))).item(), -2.5));
    }

    #[test]
    fn penalty_of_linear_and_coordinate_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let real = Tensor::from_fn([3, 1, 4, 4], |[n, _, h, w]| (n + h * w) as f64 * 0.1);
        let fake = Tensor::full([3, 1, 4, 4], -0.5);
        let d = 16.0f64;
        let sum = gradient_penalty(|x| x.sum_to([3, 1, 1, 1]), &real, &fake, &mut rng).unwrap();
        assert!(close(sum.item(), (d.sqrt() - 1.0).powi(2)), "{}", sum.item());
        let doubled = gradient_penalty(|x| x.sum_to([3, 1, 1, 1]).scale(2.0), &real, &fake, &mut rng).unwrap();
        assert!(close(doubled.item(), (2.0 * d.sqrt() - 1.0).powi(2)));
        let first = Tensor::from_fn([3, 1, 4, 4], |[_, _, h, w]| f64::from(u8::from(h == 0 && w == 0)));
        let coord = gradient_penalty(|x| x.mul_const(&first).sum_to([3, 1, 1, 1]), &real, &fake, &mut rng).unwrap();
        assert!(coord.item().abs() < 1e-10);
    }

    #[test]
    fn classification_cases() {
        let uniform = Var::constant(Tensor::zeros([2, 6, 1, 1]));
        let lu = 0.01;
        let expected = -(1.0f64 / 6.0).ln() * (1.0 + lu);
        let got = cls_loss_real(&uniform, &[0, 2], &uniform, &[3, 5], lu).item();
        assert!(close(got, expected), "{got} vs {expected}");
        assert!(close(cls_loss_fake(&uniform, &[1, 2]).item(), 6.0f64.ln()));
        let confident = Var::constant(Tensor::from_fn([1, 6, 1, 1], |[_, c, ..]| if c == 1 { 60.0 } else { 0.0 }));
        assert!(cls_loss_fake(&confident, &[1]).item() < 1e-20);
        let plain = cross_entropy(&uniform, &[0, 2]).item();
        assert_eq!(cls_loss_real(&uniform, &[0, 2], &uniform, &[3, 5], 0.0).item(), plain);
    }

    #[test]
    fn pixel_losses() {
        let b = Tensor::new([1, 1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(shape_consistency_loss(&Var::constant(b.clone()), &b).item(), 0.0);
        let half = Var::constant(Tensor::full([1, 1, 2, 2], 0.5));
        assert!(close(shape_consistency_loss(&half, &b).item(), 0.25));
        let zeros = Var::constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(close(shape_consistency_loss(&zeros, &Tensor::ones([1, 1, 2, 2])).item(), 1.0));

        let a = var([1, 1, 2, 2], &[0.1, -0.2, 0.3, 0.4]);
        let shifted = var([1, 1, 2, 2], &[0.2, -0.1, 0.4, 0.5]);
        assert_eq!(reconstruction_loss(&a, &a).item(), 0.0);
        assert!(close(reconstruction_loss(&shifted, &a).item(), 0.1));
        assert_eq!(reconstruction_loss(&a, &shifted).item(), reconstruction_loss(&shifted, &a).item());
    }

    #[test]
    fn crossing_cases() {
        let y = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let x_t = var([1, 1, 2, 2], &[0.5, 0.3, -0.7, 0.9]);
        let r_t = Var::constant(Tensor::full([1, 1, 2, 2], -1.0));
        assert!(close(crossing_loss(&x_t, &y, &r_t).item(), 0.375));
        let agree = mask_to_target(&x_t, &y);
        assert_eq!(crossing_loss(&x_t, &y, &agree).item(), 0.0);
        // values of x_t outside y do not matter when r_t is background there
        let other = var([1, 1, 2, 2], &[0.5, -0.9, 0.8, 0.0]);
        assert_eq!(crossing_loss(&other, &y, &r_t).item(), crossing_loss(&x_t, &y, &r_t).item());
    }

    #[test]
    fn totals() {
        let w = LossWeights::default();
        assert_eq!(total_d_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert!(close(total_d_loss(0.5, 0.2, 1.0, &w), 3.5));
        let one = || StreamTerms { adv: 1.0, cls_fake: 1.0, rec: 1.0 };
        assert!(close(total_g_loss(vec![one(), one()], 0.01, &w), 6.5));
        let mut w2 = w.clone();
        w2.lambda_cross = 7.0;
        assert_eq!(total_g_loss(vec![one(), one()], 0.0, &w), total_g_loss(vec![one(), one()], 0.0, &w2));
        assert!(close(total_gs_loss(0.1, 0.3), 0.4));
        let mut w3 = w.clone();
        w3.lambda_cls_r = 2.0;
        assert!(close(total_d_loss(0.5, 0.2, 1.0, &w3) - total_d_loss(0.5, 0.2, 1.0, &w), 1.0));
    }
}
