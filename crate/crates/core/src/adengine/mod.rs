//! Dense `f64` tensors and tape-based reverse-mode differentiation.
//!
//! Build a [`Tape`], register inputs with [`Tape::constant`] or
//! [`Tape::param`], compose primitives, then call [`Tape::backward`] on a
//! scalar node. Every node keeps its forward value so the record can be
//! replayed with perturbed leaves, which is how
//! [`finite_difference_check`] works.
//!
//! The only nonlinearity offered is `tanh`.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck, DEGENERATE_GRADIENT};
pub use ops::{forward as primitive_forward, OpKind, LAYER_NORM_EPS, MIN_COSINE_NORM};
pub use tape::{GradientMap, Tape, Var};
pub use tensor::{cosine, dot, norm, Tensor};
