//! Rotation-equivariant deraining networks built on a small reverse-mode
//! autograd engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`ops`]: dense tensors and differentiable primitives.
//! - [`gconv`]: the p4 group layers (lifting and group-to-group convolution),
//!   orientation pooling and a brute-force group-convolution reference.
//! - [`model`]: the single-stage network, its ablations and the plain-CNN
//!   counterpart, parameter storage and checkpoints.
//! - [`refine`]: multi-stage recurrence with skip concatenation / addition links.
//! - [`optim`], [`train`]: Adam, the step schedule and the training loop.
//! - [`data`], [`metrics`]: synthetic rain, PNG I/O, PSNR/SSIM, evaluation.
//! - [`check`]: property suites (equivariance, gradients, parameter counts).

mod autograd;
pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod gconv;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod refine;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
