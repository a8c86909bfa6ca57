//! Dense tensors, the parameter store, the backward tape, and the
//! finite-difference oracle.

mod finite_diff;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_grad, finite_diff_grad_five_point, relative_error};
pub use params::{Gradients, Param, ParamId, ParamKind, ParamStore, Shape};
pub use scalar::Scalar;
pub use tape::{log_floor, Backward, NodeId, Tape};
pub use tensor::{affine, elementwise_max_pool, softmax, Tensor1, Tensor2};
