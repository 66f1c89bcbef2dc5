//! Analytic gradients (first and second order) against central differences.

use autograd::ops::ConvGeometry;
use autograd::{grad, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64, h: f64) -> Tensor {
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    out
}

fn assert_close(analytic: &Tensor, numeric: &Tensor, rel: f64, what: &str) {
    let scale = numeric.max_abs().max(1e-3);
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        assert!(
            (a - n).abs() <= rel * scale,
            "{what}[{i}]: analytic {a} vs numeric {n} (scale {scale})"
        );
    }
}

/// Checks d f / d inputs[k] for each k, with the other inputs held fixed.
fn check(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var, what: &str) {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars);
    let refs: Vec<&Var> = vars.iter().collect();
    let grads = grad(&out, &refs, false);
    for k in 0..inputs.len() {
        let eval = |t: &Tensor| {
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| Var::constant(if j == k { t.clone() } else { x.clone() }))
                .collect();
            f(&vs).item()
        };
        let numeric = numeric_grad(&inputs[k], &eval, 1e-5);
        assert_close(grads[k].value(), &numeric, 1e-6, &format!("{what} input {k}"));
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random([2, 2, 3, 3], &mut rng);
    let b = random([2, 2, 3, 3], &mut rng).map(|v| v.abs() + 0.5);
    check(&[a.clone(), b.clone()], |v| v[0].mul(&v[1]).sub(&v[1]).sum(), "mul/sub");
    check(&[a.clone(), b.clone()], |v| v[0].div(&v[1]).tanh().sum(), "div/tanh");
    check(&[a.clone(), b.clone()], |v| v[0].sigmoid().mul(&v[1].ln()).mean(), "sigmoid/ln");
    check(&[a.clone(), b.clone()], |v| v[1].powf(-0.5).add(&v[0].exp()).sum(), "powf/exp");
    check(&[a.map(|v| v + 0.05 * v.signum())], |v| v[0].abs().scale(3.0).add_scalar(1.0).sum(), "abs");
    check(&[a.map(|v| v + 0.05 * v.signum())], |v| v[0].leaky_relu(0.2).square().sum(), "lrelu");
}

#[test]
fn reductions_and_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random([2, 3, 4, 4], &mut rng);
    let b = random([1, 3, 1, 1], &mut rng);
    check(&[x.clone(), b.clone()], |v| v[0].add_bcast(&v[1]).square().mean(), "add_bcast");
    // instance normalisation built from primitives
    check(
        &[x.clone()],
        |v| {
            let mu = v[0].mean_to([2, 3, 1, 1]);
            let c = v[0].sub_bcast(&mu);
            let var = c.square().mean_to([2, 3, 1, 1]).add_scalar(1e-5);
            c.mul_bcast(&var.powf(-0.5)).tanh().sum()
        },
        "instance norm",
    );
    check(&[x.clone()], |v| v[0].log_softmax_channels().mul_const(&x).sum(), "log_softmax");
}

#[test]
fn resampling_and_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random([2, 4, 4, 4], &mut rng);
    let y = random([2, 2, 8, 8], &mut rng);
    check(
        &[x.clone(), y.clone()],
        |v| {
            let up = v[0].slice_channels(1, 2).upsample2();
            let cat = Var::concat_channels(&[up, v[1].clone()]);
            cat.tanh().sumpool2().square().sum()
        },
        "upsample/concat/slice",
    );
}

#[test]
fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0)] {
        let x = random([2, 2, 6, 6], &mut rng);
        let w = random([3, 2, k, k], &mut rng);
        let geo = ConvGeometry::new(s, p);
        check(&[x, w], |v| v[0].conv2d(&v[1], geo).tanh().sum(), &format!("conv k{k}s{s}p{p}"));
    }
}

/// The squared norm of the input gradient of a small critic, differentiated
/// with respect to the critic weights: the gradient-penalty pattern.
#[test]
fn second_order_through_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random([2, 1, 8, 8], &mut rng);
    let w1 = random([3, 1, 4, 4], &mut rng).map(|v| v * 0.5);
    let w2 = random([2, 3, 3, 3], &mut rng).map(|v| v * 0.5);
    let w3 = random([1, 2, 1, 1], &mut rng);
    let g1 = ConvGeometry::new(2, 1);
    let g2 = ConvGeometry::new(1, 1);
    let g3 = ConvGeometry::new(1, 0);

    let critic = |x: &Var, w: &[Var]| {
        x.conv2d(&w[0], g1)
            .tanh()
            .conv2d(&w[1], g2)
            .leaky_relu(0.2)
            .conv2d(&w[2], g3)
            .mean()
    };
    let penalty = |weights: &[Var], create_graph: bool| {
        let xv = Var::param(x.clone());
        let gx = grad(&critic(&xv, weights), &[&xv], create_graph).remove(0);
        gx.square().sum().sqrt().add_scalar(-1.0).square()
    };

    let ws: Vec<Var> = [&w1, &w2, &w3].iter().map(|t| Var::param((*t).clone())).collect();
    let p = penalty(&ws, true);
    let refs: Vec<&Var> = ws.iter().collect();
    let analytic = grad(&p, &refs, false);

    let originals = [w1, w2, w3];
    for k in 0..3 {
        let eval = |t: &Tensor| {
            let vs: Vec<Var> = originals
                .iter()
                .enumerate()
                .map(|(j, w)| Var::param(if j == k { t.clone() } else { w.clone() }))
                .collect();
            penalty(&vs, false).item()
        };
        let numeric = numeric_grad(&originals[k], &eval, 1e-5);
        assert_close(analytic[k].value(), &numeric, 1e-5, &format!("penalty wrt w{}", k + 1));
    }
}

#[test]
fn unreachable_inputs_get_zero_gradient() {
    let a = Var::param(Tensor::ones([1, 1, 2, 2]));
    let b = Var::param(Tensor::ones([1, 1, 2, 2]));
    let out = a.square().sum();
    let g = grad(&out, &[&a, &b], false);
    assert_eq!(g[0].value().data(), &[2.0; 4]);
    assert_eq!(g[1].value().data(), &[0.0; 4]);
    assert!(!g[0].requires_grad());
}
