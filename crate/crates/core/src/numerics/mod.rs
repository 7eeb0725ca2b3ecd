//! Dense-matrix substrate: a row-major matrix, a parameter store, a
//! reverse-mode tape over the primitives the encoding stack needs, and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, FD_STEP, REL_FLOOR};
pub use matrix::{Matrix, TokenMatrix};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{gelu, gelu_derivative, row_softmax, Gradients, Tape, Var, LAYER_NORM_EPS};
