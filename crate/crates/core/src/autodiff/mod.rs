//! Reverse-mode differentiation over f64 tensors.
//!
//! A [`Tape`] records primitives as they are evaluated; [`Tape::backward`]
//! sweeps it in reverse and accumulates gradients into the [`ParamStore`]s the
//! leaves were loaded from. [`Adam`] consumes those gradients.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
