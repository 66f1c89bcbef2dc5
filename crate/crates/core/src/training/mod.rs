//! Adversarial optimisation: critic and generator/shape-controller steps,
//! EMA of the generator, checkpoints and the epoch loop.

mod checkpoint;
mod config;
mod run;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use config::{ModelConfig, TrainConfig, Variant};
pub use run::{checkpoint_path, iterations_per_epoch, sample_grid, train, train_with, TrainOutcome};

use std::collections::HashMap;

use autograd::optim::Adam;
use autograd::{grad, no_grad, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_model::{foreground_binarize_tensor, Batch, DEFAULT_FOREGROUND_EPS};
use crate::error::{Error, Result};
use crate::losses::{
    cls_loss_fake, cls_loss_real, critic_loss, crossing_loss, generator_adv_loss, gradient_penalty,
    reconstruction_loss, shape_consistency_loss, total_d_loss, total_g_loss, total_gs_loss,
    untraceable_labels, LossReport, LossWeights, StreamTerms,
};
use crate::networks::{Discriminator, Generator, Module, ShapeController};

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub n_modalities: usize,
    pub g: Generator,
    pub s: Option<ShapeController>,
    pub dx: Discriminator,
    pub dr: Option<Discriminator>,
    /// Averaged generator; created at the first generator step.
    pub ema: Option<Generator>,
    /// Adam over `G.*` and `S.*` parameters.
    pub opt_gs: Adam,
    pub opt_dx: Adam,
    pub opt_dr: Adam,
    /// Completed generator steps.
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(config: TrainConfig, n_modalities: usize) -> Result<Self> {
        config.validate()?;
        let net = config.model.network_config(n_modalities);
        net.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let (g_seed, s_seed, dx_seed, dr_seed) = (seeds.gen(), seeds.gen(), seeds.gen(), seeds.gen());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let v = config.variant;
        let g = Generator::new(net.generator.clone(), v.use_target_stream, g_seed)?;
        let s = v.use_shape_controller.then(|| ShapeController::new(&net.shape_controller, s_seed)).transpose()?;
        let dx = Discriminator::new(net.discriminator.clone(), dx_seed)?;
        let dr = v.use_target_stream.then(|| Discriminator::new(net.discriminator.clone(), dr_seed)).transpose()?;
        let adam = |lr| Adam::new(lr, config.adam_beta1, config.adam_beta2);
        Ok(Self {
            opt_gs: adam(config.lr_g_s),
            opt_dx: adam(config.lr_d),
            opt_dr: adam(config.lr_d),
            config,
            n_modalities,
            g,
            s,
            dx,
            dr,
            ema: None,
            step: 0,
            rng,
        })
    }

    /// Weights actually applied, with the crossing term switched off for the
    /// variant without it.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.config.weights.clone();
        if !self.config.variant.use_crossing {
            w.lambda_cross = 0.0;
        }
        w
    }

    /// Generator used at test time: the EMA copy if one exists.
    pub fn inference_generator(&self, use_ema: bool) -> &Generator {
        match (&self.ema, use_ema) {
            (Some(e), true) => e,
            _ => &self.g,
        }
    }

    fn non_finite(&self, detail: String) -> Error {
        Error::NonFinite { step: self.step, detail }
    }
}

fn collect(m: &dyn Module, prefix: &str, out: &mut Vec<(String, Var)>) {
    m.visit(prefix, &mut |n, v| out.push((n.to_string(), v.clone())));
}

/// Gradients of `loss` keyed by parameter name.
fn named_grads(loss: &Var, params: &[(String, Var)]) -> HashMap<String, Tensor> {
    let refs: Vec<&Var> = params.iter().map(|(_, v)| v).collect();
    let grads = grad(loss, &refs, false);
    params.iter().map(|(n, _)| n.clone()).zip(grads.into_iter().map(|g| g.value().clone())).collect()
}

fn check_grads(grads: &HashMap<String, Tensor>) -> std::result::Result<(), String> {
    match grads.iter().find(|(_, g)| !g.all_finite()) {
        Some((name, _)) => Err(format!("non-finite gradient for {name}")),
        None => Ok(()),
    }
}

/// One Adam step on every parameter of `m` found in `grads`.
fn apply(m: &mut dyn Module, prefix: &str, grads: &HashMap<String, Tensor>, opt: &mut Adam) {
    m.visit_mut(prefix, &mut |name, v| {
        if let Some(g) = grads.get(name) {
            *v = Var::param(opt.update(name, v.value(), g));
        }
    });
}

/// `decay * ema + (1 - decay) * g`, elementwise.
pub fn ema_update(ema: &Tensor, g: &Tensor, decay: f64) -> Tensor {
    ema.zip_map(g, |e, v| decay * e + (1.0 - decay) * v)
}

/// Applies [`ema_update`] to every parameter of `ema` from its twin in `g`.
pub fn ema_update_generator(ema: &mut Generator, g: &Generator, decay: f64) {
    let mut current = Vec::new();
    g.visit("", &mut |_, v| current.push(v.value().clone()));
    let mut i = 0;
    ema.visit_mut("", &mut |_, v| {
        *v = Var::param(ema_update(v.value(), &current[i], decay));
        i += 1;
    });
}

/// Translations of a batch with gradients off.
fn translate_detached(g: &Generator, batch: &Batch) -> Result<(Tensor, Option<Tensor>)> {
    let x_s = Var::constant(batch.x_s.clone());
    let t = batch.targets();
    no_grad(|| {
        if g.has_target_stream() {
            let (x_t, r_t) = g.forward(&x_s, &Var::constant(batch.r_s.clone()), &t)?;
            Ok((x_t.value().clone(), Some(r_t.value().clone())))
        } else {
            Ok((g.translate(&x_s, &t)?.value().clone(), None))
        }
    })
}

/// Critic step: D_x on whole images and D_r on target areas, against
/// detached translations. `G` and `S` are not touched.
pub fn train_step_d(state: &mut TrainerState, batch: &Batch) -> Result<LossReport> {
    let w = state.effective_weights();
    let n = state.n_modalities;
    let s = batch.sources();
    let s_prime = untraceable_labels(&s, n);
    let (x_t, r_t) = translate_detached(&state.g, batch)?;
    let mut report = LossReport::default();

    let critic_terms = |d: &Discriminator, real: &Tensor, fake: &Tensor, rng: &mut ChaCha8Rng| {
        let out_real = d.forward(&Var::constant(real.clone()));
        let out_fake = d.forward(&Var::constant(fake.clone()));
        let critic = critic_loss(&out_real.src, &out_fake.src);
        let gp = gradient_penalty(|v| d.src(v), real, fake, rng)?;
        let cls = cls_loss_real(&out_real.cls, &s, &out_fake.cls, &s_prime, w.lambda_u);
        let total = total_d_loss(critic.clone(), gp.clone(), cls.clone(), &w);
        Ok::<_, Error>((critic.item(), gp.item(), cls.item(), total))
    };

    let (critic, gp, cls, total) = critic_terms(&state.dx, &batch.x_s, &x_t, &mut state.rng)
        .map_err(|e| with_step(e, state.step))?;
    report.critic_x = critic;
    report.gp_x = gp;
    report.cls_r_x = cls;
    report.total_d_x = total.item();
    let mut params = Vec::new();
    collect(&state.dx, "Dx", &mut params);
    let gx = named_grads(&total, &params);

    let mut gr = None;
    if let (Some(dr), Some(r_t)) = (&state.dr, &r_t) {
        let (critic, gp, cls, total) =
            critic_terms(dr, &batch.r_s, r_t, &mut state.rng).map_err(|e| with_step(e, state.step))?;
        report.critic_r = critic;
        report.gp_r = gp;
        report.cls_r_r = cls;
        report.total_d_r = total.item();
        let mut params = Vec::new();
        collect(dr, "Dr", &mut params);
        gr = Some(named_grads(&total, &params));
    }

    if !report.all_finite() {
        return Err(state.non_finite(format!("critic losses: {}", report.describe())));
    }
    check_grads(&gx).map_err(|d| state.non_finite(d))?;
    if let Some(gr) = &gr {
        check_grads(gr).map_err(|d| state.non_finite(d))?;
    }

    state.opt_dx.begin_step();
    apply(&mut state.dx, "Dx", &gx, &mut state.opt_dx);
    if let (Some(dr), Some(gr)) = (&mut state.dr, &gr) {
        state.opt_dr.begin_step();
        apply(dr, "Dr", gr, &mut state.opt_dr);
    }
    Ok(report)
}

fn with_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
        other => other,
    }
}

/// Generator and shape-controller step: translation, cycle reconstruction,
/// shape consistency and crossing, then one Adam step on `G` and `S` and an
/// EMA update. The critics are not touched.
pub fn train_step_g_s(state: &mut TrainerState, batch: &Batch) -> Result<LossReport> {
    let w = state.effective_weights();
    let s_labels = batch.sources();
    let t_labels = batch.targets();
    let x_s = Var::constant(batch.x_s.clone());
    let mut report = LossReport::default();
    let mut streams = Vec::new();

    let (x_t, r_t, x_rec, r_rec) = if state.g.has_target_stream() {
        let r_s = Var::constant(batch.r_s.clone());
        let (x_t, r_t) = state.g.forward(&x_s, &r_s, &t_labels)?;
        let (x_rec, r_rec) = state.g.forward(&x_t, &r_t, &s_labels)?;
        (x_t, Some(r_t), x_rec, Some(r_rec))
    } else {
        let x_t = state.g.translate(&x_s, &t_labels)?;
        let x_rec = state.g.translate(&x_t, &s_labels)?;
        (x_t, None, x_rec, None)
    };

    let out = state.dx.forward(&x_t);
    let adv = generator_adv_loss(&out.src);
    let cls = cls_loss_fake(&out.cls, &t_labels);
    let rec = reconstruction_loss(&x_rec, &x_s);
    report.adv_x = adv.item();
    report.cls_f_x = cls.item();
    report.rec_x = rec.item();
    streams.push(StreamTerms { adv, cls_fake: cls, rec });

    let mut cross = Var::constant(Tensor::scalar(0.0));
    if let (Some(dr), Some(r_t), Some(r_rec)) = (&state.dr, &r_t, &r_rec) {
        let out = dr.forward(r_t);
        let adv = generator_adv_loss(&out.src);
        let cls = cls_loss_fake(&out.cls, &t_labels);
        let rec = reconstruction_loss(r_rec, &Var::constant(batch.r_s.clone()));
        report.adv_r = adv.item();
        report.cls_f_r = cls.item();
        report.rec_r = rec.item();
        streams.push(StreamTerms { adv, cls_fake: cls, rec });
        cross = crossing_loss(&x_t, &batch.y, r_t);
        report.cross = cross.item();
    }
    let total_g = total_g_loss(streams, cross, &w);
    report.total_g = total_g.item();

    let mut loss = total_g;
    if let Some(s) = &state.s {
        let b_x = foreground_binarize_tensor(&batch.x_s, DEFAULT_FOREGROUND_EPS);
        let shape_x = shape_consistency_loss(&s.forward(&x_t), &b_x);
        report.shape_x = shape_x.item();
        let shape_r = match &r_t {
            Some(r_t) => {
                let b_r = foreground_binarize_tensor(&batch.r_s, DEFAULT_FOREGROUND_EPS);
                shape_consistency_loss(&s.forward(r_t), &b_r)
            }
            None => Var::constant(Tensor::scalar(0.0)),
        };
        report.shape_r = shape_r.item();
        let total_gs = total_gs_loss(shape_x, shape_r);
        report.total_gs = total_gs.item();
        loss = loss.add(&total_gs);
    }

    if !report.all_finite() {
        return Err(state.non_finite(format!("generator losses: {}", report.describe())));
    }
    let mut params = Vec::new();
    collect(&state.g, "G", &mut params);
    if let Some(s) = &state.s {
        collect(s, "S", &mut params);
    }
    let grads = named_grads(&loss, &params);
    check_grads(&grads).map_err(|d| state.non_finite(d))?;

    let before = state.ema.is_none().then(|| state.g.clone());
    state.opt_gs.begin_step();
    apply(&mut state.g, "G", &grads, &mut state.opt_gs);
    if let Some(s) = &mut state.s {
        apply(s, "S", &grads, &mut state.opt_gs);
    }
    let ema = state.ema.get_or_insert_with(|| before.expect("first step snapshot"));
    ema_update_generator(ema, &state.g, state.config.ema_decay);
    state.step += 1;
    Ok(report)
}

/// `d_steps_per_g_step` critic steps on fresh batches, then one generator
/// step. The returned report holds the last critic step's terms.
pub fn train_iteration(
    state: &mut TrainerState,
    dataset: &crate::data_model::Dataset,
) -> Result<LossReport> {
    let bs = state.config.batch_size;
    let mut d_report = LossReport::default();
    for _ in 0..state.config.d_steps_per_g_step {
        let batch = crate::data_model::sample_training_batch(dataset, bs, &mut state.rng);
        d_report = train_step_d(state, &batch)?;
    }
    let batch = crate::data_model::sample_training_batch(dataset, bs, &mut state.rng);
    let mut report = train_step_g_s(state, &batch)?;
    report.merge_discriminator(&d_report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_arithmetic() {
        let one = Tensor::ones([1, 1, 1, 1]);
        let mut e = Tensor::zeros([1, 1, 1, 1]);
        e = ema_update(&e, &one, 0.999);
        assert!((e.item() - 0.001).abs() < 1e-15);
        for _ in 1..10 {
            e = ema_update(&e, &one, 0.999);
        }
        assert!((e.item() - (1.0 - 0.999f64.powi(10))).abs() < 1e-12);
        let g = Tensor::full([1, 1, 2, 2], 0.3);
        assert_eq!(ema_update(&g, &g, 0.999), g);
    }

    #[test]
    fn ema_matches_direct_sum() {
        let decay = 0.9;
        let gs = [0.5, -1.0, 2.0, 0.25, 3.0];
        let e0 = 0.7;
        let mut e = Tensor::full([1, 1, 1, 1], e0);
        for g in gs {
            e = ema_update(&e, &Tensor::full([1, 1, 1, 1], g), decay);
        }
        let k = gs.len() as i32;
        let direct = decay.powi(k) * e0
            + (1.0 - decay)
                * gs.iter().enumerate().map(|(i, g)| decay.powi(k - 1 - i as i32) * g).sum::<f64>();
        assert!((e.item() - direct).abs() < 1e-12);
    }
}
