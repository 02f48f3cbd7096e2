//! Reverse-mode differentiation over the tensor operations.

mod gradcheck;
mod graph;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Eval, Graph};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
