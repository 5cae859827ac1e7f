#![allow(dead_code)]

use ndarray::{Array2, ArrayD, IxDyn};
use pswm_core::{Batch, Rng, Scalar, WorldModelConfig};

/// Random batch with smooth-ish frames in [0, 1] and binary rewards.
pub fn random_batch<T: Scalar>(cfg: &WorldModelConfig, b: usize, t: usize, seed: u64) -> Batch<T> {
    let mut rng = Rng::new(seed);
    let frames = ArrayD::from_shape_fn(IxDyn(&[b, t + 1, cfg.frame_height, cfg.frame_width, 3]), |_| {
        pswm_core::cast::<T>(rng.uniform())
    });
    let actions = Array2::from_shape_fn((b, t), |_| rng.below(cfg.num_actions));
    let rewards = Array2::from_shape_fn((b, t), |_| pswm_core::cast::<T>(rng.below(2) as f64));
    Batch { frames, actions, rewards: Some(rewards) }
}
