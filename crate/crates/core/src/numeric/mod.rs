//! Dense matrices, padded batch tensors, activations and the gradient-check harness.

mod gradcheck;
mod matrix;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_with, random_batch, relative_error, GradCheckReport, Layer, Objective,
    Projection,
};
pub use matrix::{dot, sigmoid, softmax_in_place, Activation, Matrix};
pub(crate) use matrix::t_matmul_acc;
pub use tensor::{BatchTensor, Parameter};
