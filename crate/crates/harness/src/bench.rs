//! Throughput benchmark: training episodes per second, imagination frames per
//! second and peak resident memory of the process.

use std::time::Instant;

use ndarray::{Array2, ArrayD, IxDyn};
use pswm_core::model::train_step;
use pswm_core::substrate::AdamWConfig;
use pswm_core::{Batch, ParamStore, Rng, SampleMode, WorldModel};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::model::AnyModel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub batch: usize,
    pub train_len: usize,
    pub train_batches: usize,
    pub context: usize,
    pub generate: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { batch: 8, train_len: 512, train_batches: 20, context: 100, generate: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub spec: BenchSpec,
    pub train_episodes_per_sec: f64,
    pub imagine_frames_per_sec: f64,
    /// Peak resident set size of the process in bytes, if the platform reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn random_frames(rng: &mut ChaCha8Rng, b: usize, t: usize, s: usize) -> ArrayD<f32> {
    let data = (0..b * t * s * s * 3).map(|_| rng.random::<f32>()).collect();
    ArrayD::from_shape_vec(IxDyn(&[b, t, s, s, 3]), data).expect("frame layout")
}

fn random_actions(rng: &mut ChaCha8Rng, b: usize, t: usize, n: usize) -> Array2<usize> {
    Array2::from_shape_fn((b, t), |_| rng.random_range(0..n))
}

/// Benchmarks the model family of `cfg` with fresh weights on random inputs.
pub fn run(cfg: &RunConfig, spec: BenchSpec) -> Result<BenchReport> {
    let mut store = ParamStore::new();
    let model = AnyModel::build(cfg, &mut store)?;
    let m = &cfg.model;
    let mut data = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opt = AdamWConfig { weight_decay: cfg.train.weight_decay, clip_norm: Some(cfg.train.clip), ..AdamWConfig::default() };
    let mut rng = Rng::new(cfg.seed);

    let batches: Vec<Batch<f32>> = (0..spec.train_batches)
        .map(|_| Batch {
            frames: random_frames(&mut data, spec.batch, spec.train_len + 1, m.frame_height),
            actions: random_actions(&mut data, spec.batch, spec.train_len, m.num_actions),
            rewards: Some(Array2::zeros((spec.batch, spec.train_len))),
        })
        .collect();
    let start = Instant::now();
    for b in &batches {
        train_step(&model, &mut store, b, cfg.train.lr, &opt, &mut rng)?;
    }
    let train_secs = start.elapsed().as_secs_f64();
    drop(batches);

    let ctx = random_frames(&mut data, spec.batch, spec.context + 1, m.frame_height);
    let ctx_actions = random_actions(&mut data, spec.batch, spec.context, m.num_actions);
    let query = random_actions(&mut data, spec.batch, spec.generate, m.num_actions);
    let start = Instant::now();
    model.imagine(&store, &ctx, &ctx_actions, &query, SampleMode::Sample, &mut rng)?;
    let imagine_secs = start.elapsed().as_secs_f64();

    Ok(BenchReport {
        model: cfg.family.name().into(),
        spec,
        train_episodes_per_sec: (spec.train_batches * spec.batch) as f64 / train_secs,
        imagine_frames_per_sec: (spec.batch * spec.generate) as f64 / imagine_secs,
        peak_rss_bytes: peak_rss_bytes(),
    })
}
