//! Differentiable tensor primitives.

mod activation;
mod conv;
mod elementwise;
pub(crate) mod gemm;
mod reduce;
mod shape;
mod winograd;

pub use activation::{leaky_relu, relu, sigmoid};
pub use conv::{conv2d, conv2d_direct};
pub use elementwise::{add, mul, mul_channelwise, mul_scalar, sub};
pub use reduce::{global_avg_pool, mean, mse_loss, sum};
pub use shape::{concat_channels, gather, reshape};
