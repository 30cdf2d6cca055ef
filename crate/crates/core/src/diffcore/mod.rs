//! Reverse-mode automatic differentiation over small dense arrays.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{log_softmax_values, softmax_values, Gradients, Tape, Var};
pub use tensor::{init_weight, HasParams, ParamId, ParamStore, Parameter, Tensor};
