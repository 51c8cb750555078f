//! Reverse-mode automatic differentiation.

pub mod fault;
mod fd;
mod graph;
mod params;
mod tensor;

pub use fd::{finite_difference_gradient, finite_difference_jacobian, max_relative_error, FdError, REL_ERR_FLOOR};
pub use graph::{Graph, GraphError, Result, Var};
pub use params::{
    apply_sgd_step, clip_elementwise, clip_params, differentiable_sgd_step, evaluate, gradient, BoundParams, ParamSet,
    StepOrder,
};
pub use tensor::{ConvGeometry, Tensor};
