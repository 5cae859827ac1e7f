//! Differentiable tensor substrate: tape autodiff, parameters, optimizer, randomness, checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod fft;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use optim::{adamw_step, lr_schedule, AdamWConfig, StepStats};
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Reshaped, Tape, Var};
