#![allow(dead_code)]

use autograd::{grad, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;

pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Worst relative error between analytic and central-difference gradients of
/// `f` with respect to each input.
pub fn max_gradient_error(inputs: &[Tensor], f: &dyn Fn(&[Var]) -> Var) -> f64 {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let refs: Vec<&Var> = vars.iter().collect();
    let analytic = grad(&f(&vars), &refs, false);
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let eval = |t: Tensor| {
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| Var::constant(if j == k { t.clone() } else { x.clone() }))
                .collect();
            f(&vs).item()
        };
        for i in 0..inputs[k].numel() {
            let mut plus = inputs[k].clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = inputs[k].clone();
            minus.data_mut()[i] -= FD_STEP;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * FD_STEP);
            let a = analytic[k].value().data()[i];
            if a.abs().max(numeric.abs()) > 1e-9 {
                worst = worst.max(relative_error(a, numeric));
            }
        }
    }
    worst
}

/// Random `{0, 1}` mask with at least one foreground pixel.
pub fn random_mask(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let mut m = Tensor::from_fn(shape, |_| f64::from(u8::from(rng.gen_bool(0.4))));
    m.data_mut()[0] = 1.0;
    m
}

/// 16x16 corpus of 6 anatomies in 3 modalities.
pub fn tiny_dataset(root: &std::path::Path) -> targan::data_model::Dataset {
    let spec = targan::data_model::PhantomSpec { resolution: 16, n_anatomies: 6, ..Default::default() };
    let manifest = targan::data_model::generate_phantom_dataset(&spec, 7, root).unwrap();
    targan::data_model::load_dataset(&manifest.path()).unwrap()
}

/// Smallest legal model, batch 2.
pub fn tiny_config(seed: u64) -> targan::training::TrainConfig {
    let mut c = targan::training::TrainConfig::default();
    c.model.base_channels = 4;
    c.model.depth = 2;
    c.model.middle_blocks = 1;
    c.model.shape_base_channels = 4;
    c.model.critic_base_channels = 4;
    c.model.critic_depth = 2;
    c.batch_size = 2;
    c.epochs = 2;
    c.seed = seed;
    c
}
