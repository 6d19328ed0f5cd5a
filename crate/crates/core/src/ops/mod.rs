//! Differentiable tensor operations.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod sample;
mod shape_ops;

pub use conv::{conv2d, try_conv2d};
pub use elementwise::{
    abs, add, add_scalar, div, exp, gelu, log, maximum, minimum, mul, neg, relu, scale, sigmoid,
    sqrt, sub, tanh, try_binary_shapes,
};
pub use matmul::{matmul, try_matmul};
pub use norm::layernorm;
pub use reduce::{max_axis, mean_all, mean_axis, softmax, sum_all, sum_axis};
pub use sample::{grid_sample, lsa_gather, splat};
pub use shape_ops::{
    bilinear_upsample_x2, concat, permute, reshape, scatter_add, slice, try_concat, try_slice,
};
