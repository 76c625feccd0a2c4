//! Core library for the CCA learned image codec: a tape-based autodiff
//! tensor engine, probability models for quantized latents, the training
//! losses, and the convolutional transform/entropy networks.
//!
//! Everything numeric is generic over the element type via [`Scalar`];
//! training uses f64, inference may use f32. The f64 aliases below are
//! the types the rest of the workspace builds on.

pub mod detmath;
pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{CoreError, CoreResult};
pub use scalar::{Dtype, Scalar};
pub use tensor::{concat_channels, finite_diff_check, Tape, Tensor, TensorData};

/// f64 tensor (training precision).
pub type Tensor64 = Tensor<f64>;
/// f32 tensor (inference precision).
pub type Tensor32 = Tensor<f32>;
pub type TensorData64 = TensorData<f64>;
pub type TensorData32 = TensorData<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
