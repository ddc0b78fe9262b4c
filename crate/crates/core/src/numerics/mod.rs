//! Dense matrices, a reverse-mode tape, parameters, optimisation and a
//! finite-difference gradient checker.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Axis, Binary, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
