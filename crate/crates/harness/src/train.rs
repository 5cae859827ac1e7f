//! Training loop: deterministic batches, periodic validation, best-validation
//! checkpointing and a CSV metrics log.
//!
//! A run directory holds `config.txt`, `metrics.csv` (one row per step),
//! `val.csv`, `best.ckpt`, `last.ckpt` and, while a process owns it, `run.lock`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pswm_core::model::{eval_loss, train_step};
use pswm_core::substrate::{checkpoint, lr_schedule, AdamWConfig};
use pswm_core::{ParamStore, Rng};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Schedule};
use crate::data::EpisodeSet;
use crate::model::AnyModel;
use crate::{HarnessError, Result};

pub const METRICS_HEADER: &str = "step,loss,recon,kl,reward_loss,lr,wallclock";

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join("run.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(HarnessError::Usage(format!(
                "{} is locked by another process (remove run.lock if it is stale)",
                dir.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: u64,
    pub best_val: f64,
    pub best_step: u64,
    pub last_loss: f64,
    pub wallclock: f64,
    pub stopped_early: bool,
}

pub fn steps_per_epoch(n_episodes: usize, batch: usize) -> u64 {
    (n_episodes / batch).max(1) as u64
}

pub fn total_steps(cfg: &RunConfig, n_episodes: usize) -> u64 {
    if cfg.train.max_steps > 0 {
        cfg.train.max_steps
    } else {
        cfg.train.epochs as u64 * steps_per_epoch(n_episodes, cfg.train.batch_size)
    }
}

pub fn learning_rate(cfg: &RunConfig, step: u64, total: u64) -> f64 {
    let t = &cfg.train;
    let s = step + 1;
    match t.schedule {
        Schedule::Cosine => lr_schedule(s, total + 1, t.lr, t.warmup),
        Schedule::Constant => t.lr * (s as f64 / t.warmup.max(1) as f64).min(1.0),
    }
}

fn mix(seed: u64, tag: u64, i: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Episode indices of the batch used at `step`: a fresh permutation per epoch.
pub fn batch_indices(seed: u64, step: u64, n_episodes: usize, batch: usize) -> Vec<usize> {
    let spe = steps_per_epoch(n_episodes, batch);
    let (epoch, pos) = (step / spe, (step % spe) as usize);
    let mut order: Vec<usize> = (0..n_episodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 1, epoch)));
    (0..batch).map(|j| order[(pos * batch + j) % n_episodes]).collect()
}

/// Sampling noise for `step`.
pub fn step_rng(seed: u64, step: u64) -> Rng {
    Rng::new(mix(seed, 2, step))
}

/// Mean validation loss over `val` in batches.
pub fn validation_loss(model: &AnyModel, store: &ParamStore<f32>, val: &EpisodeSet, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(batch) {
        let b = val.batch(chunk);
        total += eval_loss(model, store, &b)? * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

/// Trains `cfg` on `train`, validating on `val`, writing into `out`.
///
/// With `resume`, continues from `out/last.ckpt`. `session_steps` stops this
/// invocation after that many steps (the schedule still spans the whole run).
/// `progress` receives one line per validation.
pub fn train(
    cfg: &RunConfig,
    train: &EpisodeSet,
    val: &EpisodeSet,
    out: &Path,
    resume: bool,
    session_steps: Option<u64>,
    mut progress: impl FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.frame_size != cfg.model.frame_height {
        return Err(HarnessError::Usage(format!(
            "dataset frames are {0}x{0} but the model expects {1}x{1}",
            train.frame_size, cfg.model.frame_height
        )));
    }
    let _lock = RunLock::acquire(out)?;
    let mut store = ParamStore::new();
    let model = AnyModel::build(cfg, &mut store)?;
    let last = out.join("last.ckpt");
    let best = out.join("best.ckpt");
    let mut best_val = f64::INFINITY;
    let mut best_step = 0;
    if resume && last.exists() {
        checkpoint::load(&last, &mut store)?;
        if let Ok(text) = fs::read_to_string(out.join("val.csv")) {
            for line in text.lines().skip(1) {
                if let Some((s, v)) = line.split_once(',') {
                    if let (Ok(s), Ok(v)) = (s.parse::<u64>(), v.parse::<f64>()) {
                        if s <= store.step && v < best_val {
                            best_val = v;
                            best_step = s;
                        }
                    }
                }
            }
        }
    } else {
        for f in ["metrics.csv", "val.csv", "best.ckpt", "last.ckpt"] {
            let _ = fs::remove_file(out.join(f));
        }
    }
    fs::write(out.join("config.txt"), cfg.to_text())?;

    let total = total_steps(cfg, train.len());
    let opt = AdamWConfig { weight_decay: cfg.train.weight_decay, clip_norm: Some(cfg.train.clip), ..AdamWConfig::default() };
    let val_set = if cfg.train.val_episodes > 0 { val.subset(cfg.train.val_episodes) } else { val.clone() };
    let start = Instant::now();
    let metrics = out.join("metrics.csv");
    let mut csv = String::new();
    let mut last_loss = f64::NAN;
    let mut stopped_early = false;

    let mut validate = |store: &ParamStore<f32>, step: u64, best_val: &mut f64, best_step: &mut u64, csv: &mut String| -> Result<()> {
        let v = validation_loss(&model, store, &val_set, cfg.train.batch_size)?;
        if !v.is_finite() {
            return Err(HarnessError::Numeric(format!("validation loss is {v} at step {step}")));
        }
        append_line(&out.join("val.csv"), "step,val_loss", &format!("{step},{v}"))?;
        if v < *best_val {
            *best_val = v;
            *best_step = step;
            checkpoint::save(&best, store)?;
        }
        checkpoint::save(&last, store)?;
        // flush buffered metric rows together with the checkpoint
        if !csv.is_empty() {
            let fresh = !metrics.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(&metrics)?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}")?;
            }
            f.write_all(csv.as_bytes())?;
            csv.clear();
        }
        progress(&format!(
            "step {step}/{total} val {v:.2} best {:.2} @ {} ({:.0}s)",
            best_val,
            best_step,
            start.elapsed().as_secs_f64()
        ));
        Ok(())
    };

    let stop = session_steps.map_or(total, |n| total.min(store.step + n));
    while store.step < stop {
        let step = store.step;
        let idx = batch_indices(cfg.seed, step, train.len(), cfg.train.batch_size);
        let batch = train.batch(&idx);
        let lr = learning_rate(cfg, step, total);
        let stats = train_step(&model, &mut store, &batch, lr, &opt, &mut step_rng(cfg.seed, step))?;
        last_loss = stats.loss;
        let done = store.step;
        csv.push_str(&format!(
            "{done},{},{},{},{},{lr},{:.3}\n",
            stats.loss,
            stats.recon,
            stats.kl,
            stats.reward,
            start.elapsed().as_secs_f64()
        ));
        let over_budget = cfg.train.time_budget > 0.0 && start.elapsed().as_secs_f64() > cfg.train.time_budget;
        if done % cfg.train.eval_every.max(1) == 0 || done == stop || over_budget {
            validate(&store, done, &mut best_val, &mut best_step, &mut csv)?;
        }
        if over_budget && done < stop {
            stopped_early = true;
            break;
        }
    }
    if !csv.is_empty() || !best.exists() {
        validate(&store, store.step, &mut best_val, &mut best_step, &mut csv)?;
    }
    Ok(TrainOutcome {
        steps: store.step,
        best_val,
        best_step,
        last_loss,
        wallclock: start.elapsed().as_secs_f64(),
        stopped_early,
    })
}

/// Creates `dir` if needed and returns the checkpoint path inside it.
pub fn best_checkpoint(dir: &Path) -> PathBuf {
    dir.join("best.ckpt")
}

/// Opens a CSV for writing with a header line.
pub fn create_csv(path: &Path, header: &str) -> Result<File> {
    let mut f = File::create(path)?;
    writeln!(f, "{header}")?;
    Ok(f)
}
