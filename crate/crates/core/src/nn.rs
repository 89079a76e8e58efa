//! Parameter initialization and the small layers reused across the model.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Binder, ParamStore, Tensor, Var, LAYER_NORM_EPS};

pub fn xavier(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

/// Registers `{name}.weight: [i, o]` (Xavier) and `{name}.bias: [o]` (zeros).
pub fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, name: &str, i: usize, o: usize) -> Result<()> {
    store.insert(format!("{name}.weight"), xavier(rng, &[i, o], i, o))?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[o]))
}

pub fn init_linear_zero(store: &mut ParamStore, name: &str, i: usize, o: usize) -> Result<()> {
    store.insert(format!("{name}.weight"), Tensor::zeros(&[i, o]))?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[o]))
}

pub fn init_norm(store: &mut ParamStore, name: &str, n: usize) -> Result<()> {
    store.insert(format!("{name}.gain"), Tensor::ones(&[n]))?;
    store.insert(format!("{name}.shift"), Tensor::zeros(&[n]))
}

pub fn linear<'t>(bind: &Binder<'_, 't>, x: Var<'t>, name: &str) -> Result<Var<'t>> {
    x.linear(bind.get(&format!("{name}.weight"))?, Some(bind.get(&format!("{name}.bias"))?))
}

pub fn norm<'t>(bind: &Binder<'_, 't>, x: Var<'t>, name: &str) -> Result<Var<'t>> {
    x.layer_norm(
        bind.get(&format!("{name}.gain"))?,
        bind.get(&format!("{name}.shift"))?,
        LAYER_NORM_EPS,
    )
}

/// Two-layer perceptron `fc2(relu(fc1(x)))`.
pub fn mlp<'t>(bind: &Binder<'_, 't>, x: Var<'t>, name: &str) -> Result<Var<'t>> {
    let h = linear(bind, x, &format!("{name}.fc1"))?.relu();
    linear(bind, h, &format!("{name}.fc2"))
}

pub fn init_mlp(store: &mut ParamStore, rng: &mut impl Rng, name: &str, i: usize, hidden: usize, o: usize) -> Result<()> {
    init_linear(store, rng, &format!("{name}.fc1"), i, hidden)?;
    init_linear(store, rng, &format!("{name}.fc2"), hidden, o)
}
