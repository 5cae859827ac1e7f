//! Parallelizable state-space world models.
//!
//! The crate is organized bottom-up: [`substrate`] provides a small tape-based
//! autodiff over `ndarray` tensors, [`ssm`] the linear state-space kernels
//! with both parallel and single-step execution, [`blocks`] the residual
//! SSM block stack, and [`model`] the latent world models (SSM backbone and
//! recurrent baseline) with their shared encoder, decoder and latent heads.
//!
//! All numerical code is generic over [`Scalar`]; the aliases below fix the
//! two precisions used in practice.

pub mod blocks;
pub mod error;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod ssm;
pub mod substrate;

pub use error::{Error, Result};
pub use scalar::{cast, DType, Scalar};
pub use substrate::{ParamId, ParamStore, Rng, Tape, Var};

pub type Tensor<T> = ndarray::ArrayD<T>;

/// Training precision.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = Tensor<f64>;
pub type Store32 = ParamStore<f32>;
pub type Store64 = ParamStore<f64>;

pub use blocks::{BlockConfig, BlockStack, PssmState};
pub use model::{Batch, ImaginationResult, PosteriorMode, Rssm, S4wm, SampleMode, WorldModel, WorldModelConfig};
pub use ssm::Flavor;
