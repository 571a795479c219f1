//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use tape::{Gradients, Tape, Var};

/// LayerNorm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
