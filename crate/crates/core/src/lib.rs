//! Cardiac motion tracking with bi-directional selective state-space scans.
//!
//! A window of `2K + 1` frames around a target frame is paired with the
//! reference frame, encoded by a four-level hierarchy of bi-directional Mamba
//! blocks, upsampled back to full resolution and fused over the frame axis
//! into a dense displacement field. Training is unsupervised through
//! bilinear warping.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod ssm;
pub mod tensor;
pub mod warp_loss;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ImageSequence32 = data::ImageSequence<f32>;
pub type ImageSequence64 = data::ImageSequence<f64>;
pub type MotionField32 = decoder::MotionField<f32>;
pub type MotionField64 = decoder::MotionField<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Checkpoint32 = pipeline::Checkpoint<f32>;
pub type Checkpoint64 = pipeline::Checkpoint<f64>;
