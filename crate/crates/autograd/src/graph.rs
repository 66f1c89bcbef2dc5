//! Computation graph nodes and the reverse sweep.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Shape, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Backward rule: receives the parents, the gradient flowing into the output
/// and which parents need a gradient. Returns one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[Var], &Var, &[bool]) -> Vec<Option<Var>>>;

struct GradFn {
    name: &'static str,
    parents: Vec<Var>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// A tensor value together with the operation that produced it.
///
/// Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

/// Whether operations currently record the graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording any graph. Results are constants.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

impl Var {
    fn node(value: Tensor, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
        }))
    }

    /// A leaf that does not take part in differentiation.
    pub fn constant(value: Tensor) -> Self {
        Self::node(value, false, None)
    }

    /// A trainable leaf.
    pub fn param(value: Tensor) -> Self {
        Self::node(value, true, None)
    }

    pub(crate) fn from_op(
        name: &'static str,
        value: Tensor,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(Var::requires_grad);
        if track {
            Self::node(value, true, Some(GradFn { name, parents, backward }))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    fn parents(&self) -> &[Var] {
        self.0.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[])
    }
}

/// Gradients of `output` (summed over its elements) with respect to `inputs`.
///
/// Inputs the output does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    if create_graph {
        backward_sweep(output, inputs)
    } else {
        no_grad(|| backward_sweep(output, inputs))
    }
}

fn backward_sweep(output: &Var, inputs: &[&Var]) -> Vec<Var> {
    let zeros = |v: &Var| Var::constant(Tensor::zeros(v.shape()));
    if !output.requires_grad() {
        return inputs.iter().map(|v| zeros(v)).collect();
    }

    // Post-order over the graph reachable from the output.
    let mut order: Vec<Var> = Vec::new();
    let mut visited: HashMap<u64, bool> = HashMap::new();
    let mut stack: Vec<(Var, bool)> = vec![(output.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if visited.contains_key(&v.id()) {
            continue;
        }
        visited.insert(v.id(), false);
        stack.push((v.clone(), true));
        for p in v.parents() {
            if p.requires_grad() && !visited.contains_key(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }

    // A node is relevant when some requested input is reachable from it.
    let wanted: HashMap<u64, ()> = inputs.iter().map(|v| (v.id(), ())).collect();
    let mut relevant: HashMap<u64, bool> = HashMap::with_capacity(order.len());
    for v in &order {
        let r = wanted.contains_key(&v.id())
            || v.parents().iter().any(|p| relevant.get(&p.id()).copied().unwrap_or(false));
        relevant.insert(v.id(), r);
    }

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
    for v in order.iter().rev() {
        if !relevant[&v.id()] {
            continue;
        }
        let Some(grad_fn) = v.0.grad_fn.as_ref() else { continue };
        let Some(g) = grads.get(&v.id()).cloned() else { continue };
        let needs: Vec<bool> = grad_fn
            .parents
            .iter()
            .map(|p| relevant.get(&p.id()).copied().unwrap_or(false))
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let parent_grads = (grad_fn.backward)(&grad_fn.parents, &g, &needs);
        debug_assert_eq!(parent_grads.len(), grad_fn.parents.len(), "{}", grad_fn.name);
        for ((p, pg), need) in grad_fn.parents.iter().zip(parent_grads).zip(needs) {
            let Some(pg) = pg else { continue };
            if !need {
                continue;
            }
            debug_assert_eq!(pg.shape(), p.shape(), "gradient shape from {}", grad_fn.name);
            let acc = match grads.remove(&p.id()) {
                Some(existing) => existing.add(&pg),
                None => pg,
            };
            grads.insert(p.id(), acc);
        }
        // Interior gradients are no longer needed once propagated.
        if !wanted.contains_key(&v.id()) {
            grads.remove(&v.id());
        }
    }

    inputs
        .iter()
        .map(|v| grads.get(&v.id()).cloned().unwrap_or_else(|| zeros(v)))
        .collect()
}
