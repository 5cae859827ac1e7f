//! World-model hyperparameters.

use crate::error::{Error, Result};
use crate::nn::ConvShape;
use crate::ssm::{Flavor, DEFAULT_MAX_KERNEL_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorMode {
    /// `q(z_t | x_t)`
    Factorized,
    /// `q(z_t | x_{0:t}, a_{1:t})` through a separate block stack.
    FullHistory,
}

/// How latents are produced from their distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Random one-hot with straight-through gradients.
    Sample,
    /// Argmax one-hot with straight-through gradients.
    Mode,
    /// The mixed probability vector itself (a smooth surrogate used for gradient checks).
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelConfig {
    pub groups: usize,
    pub classes: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
    pub flavor: Flavor,
    /// Real SSM state size per system.
    pub state_size: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub cnn_layers: usize,
    pub cnn_multiplier: usize,
    pub mlp_units: usize,
    pub mlp_layers: usize,
    pub num_actions: usize,
    pub alpha: f64,
    pub posterior_mode: PosteriorMode,
    pub no_mlp: bool,
    pub reward_head: bool,
    /// Longest imagination horizon accepted by `imagine`.
    pub max_horizon: usize,
    pub max_kernel_len: usize,
    /// GRU width of the recurrent baseline.
    pub rssm_hidden: usize,
}

impl WorldModelConfig {
    /// Laptop-sized defaults for 32x32 frames.
    pub fn desk() -> Self {
        Self {
            groups: 16,
            classes: 16,
            d_model: 128,
            d_ff: 512,
            n_blocks: 4,
            flavor: Flavor::Dplr,
            state_size: 16,
            frame_height: 32,
            frame_width: 32,
            cnn_layers: 3,
            cnn_multiplier: 16,
            mlp_units: 256,
            mlp_layers: 1,
            num_actions: 4,
            alpha: 0.8,
            posterior_mode: PosteriorMode::Factorized,
            no_mlp: false,
            reward_head: true,
            max_horizon: 1024,
            max_kernel_len: DEFAULT_MAX_KERNEL_LEN,
            rssm_hidden: 512,
        }
    }

    /// Tiny configuration for gradient checks and property tests.
    pub fn micro() -> Self {
        Self {
            groups: 4,
            classes: 4,
            d_model: 16,
            d_ff: 16,
            n_blocks: 1,
            flavor: Flavor::Dplr,
            state_size: 4,
            frame_height: 8,
            frame_width: 8,
            cnn_layers: 2,
            cnn_multiplier: 2,
            mlp_units: 16,
            mlp_layers: 1,
            num_actions: 4,
            alpha: 0.8,
            posterior_mode: PosteriorMode::Factorized,
            no_mlp: false,
            reward_head: true,
            max_horizon: 64,
            max_kernel_len: DEFAULT_MAX_KERNEL_LEN,
            rssm_hidden: 16,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.groups * self.classes
    }

    pub fn conv_shape(&self) -> ConvShape {
        ConvShape {
            height: self.frame_height,
            width: self.frame_width,
            layers: self.cnn_layers,
            multiplier: self.cnn_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("groups", self.groups),
            ("classes", self.classes),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("mlp_units", self.mlp_units),
            ("num_actions", self.num_actions),
            ("state_size", self.state_size),
            ("rssm_hidden", self.rssm_hidden),
            ("max_horizon", self.max_horizon),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.conv_shape().validate()
    }
}
