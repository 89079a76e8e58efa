//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gemm;
pub mod gradcheck;
mod ops;
mod params;
mod spatial;
mod tape;
mod value;

pub use ops::sigmoid;
pub(crate) use ops::softmax_in_place;
pub use params::{Adam, AdamConfig, Binder, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;


/// Epsilon used by every layer normalization in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;
