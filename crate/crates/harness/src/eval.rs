//! Evaluation on a dataset split: teacher-forced reconstruction, imagination
//! over the query phase and reward accuracy.
//!
//! All errors are per-pixel squared errors on the 0-255 scale. Rollouts use
//! mode (argmax) latents.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayD, ArrayView4, Axis, Ix4};
use pswm_core::model::per_step_mse;
use pswm_core::{ParamStore, Rng, SampleMode, WorldModel};
use pswm_envs::render::cell_mask;
use pswm_envs::{generate_world, Action, Cell, EnvKind};
use serde::{Deserialize, Serialize};

use crate::data::EpisodeSet;
use crate::image::{comparison_grid, write_png};
use crate::model::AnyModel;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub episodes: usize,
    pub context_len: usize,
    pub query_len: usize,
    /// Teacher-forced, averaged over steps 1..T.
    pub recon_mse: f64,
    /// Teacher-forced, averaged over the query steps only.
    pub recon_mse_query: f64,
    /// Imagination, averaged over the query steps.
    pub gen_mse: f64,
    pub gen_mse_per_step: Vec<f64>,
    /// Generation error at selected horizons (1-based).
    pub gen_mse_at: BTreeMap<usize, f64>,
    /// Reward accuracy of the teacher-forced pass.
    pub inference_accuracy: Option<f64>,
    /// Reward accuracy of the imagination pass over the query steps.
    pub imagination_accuracy: Option<f64>,
    /// Door pixels only, query steps (Multi Doors Keys).
    pub door_recon_mse: Option<f64>,
    pub door_gen_mse: Option<f64>,
}

#[derive(Default)]
struct Masked {
    sse: f64,
    count: usize,
}

impl Masked {
    fn add(&mut self, pred: ArrayView4<f32>, truth: ArrayView4<f32>, masks: &[Vec<bool>]) {
        let (q, h, w, _) = pred.dim();
        for t in 0..q {
            for y in 0..h {
                for x in 0..w {
                    if masks[t][y * w + x] {
                        for c in 0..3 {
                            let d = 255.0 * (f64::from(pred[[t, y, x, c]]).clamp(0.0, 1.0) - f64::from(truth[[t, y, x, c]]));
                            self.sse += d * d;
                            self.count += 1;
                        }
                    }
                }
            }
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sse / self.count as f64)
    }
}

/// Door-pixel masks of frames `C+1..=T` of episode `seed`, from a replay.
pub fn door_masks(kind: EnvKind, seed: u64, actions: &[u8], context_len: usize, size: usize) -> Result<Vec<Vec<bool>>> {
    let mut world = generate_world(kind, seed)?;
    let mut masks = Vec::new();
    for (t, &a) in actions.iter().enumerate() {
        world.step(Action::from_u8(a).ok_or_else(|| HarnessError::Data(format!("bad action {a}")))?);
        if t + 1 > context_len {
            masks.push(cell_mask(&world, size, |c| matches!(c, Cell::Door { .. })));
        }
    }
    Ok(masks)
}

fn accuracy(logits: &Array2<f32>, rewards: &Array2<f32>, steps: &[usize], offset: usize) -> (usize, usize) {
    let mut hit = 0;
    let mut n = 0;
    for b in 0..logits.nrows() {
        for &t in steps {
            if t < offset || t - offset >= logits.ncols() {
                continue;
            }
            let pred = logits[[b, t - offset]] > 0.0;
            hit += usize::from(pred == (rewards[[b, t]] > 0.5));
            n += 1;
        }
    }
    (hit, n)
}

/// Evaluates `model` on every episode of `set` in batches of `batch`.
///
/// `horizons` picks the entries of `gen_mse_at`. With `dump_dir`, the first
/// `dumps` episodes are written as PNG grids.
pub fn evaluate(
    model: &AnyModel,
    store: &ParamStore<f32>,
    set: &EpisodeSet,
    batch: usize,
    horizons: &[usize],
    dump_dir: Option<&Path>,
    dumps: usize,
) -> Result<EvalReport> {
    let cfg = model.config();
    if set.frame_size != cfg.frame_height {
        return Err(HarnessError::Usage(format!(
            "dataset frames are {0}x{0} but the model expects {1}x{1}",
            set.frame_size, cfg.frame_height
        )));
    }
    let (c, q, steps) = (set.context_len, set.query_len(), set.steps);
    let mut rng = Rng::new(0);
    let mut recon = vec![0.0; steps];
    let mut gen = vec![0.0; q];
    let mut seen = 0usize;
    let (mut inf_hit, mut inf_n, mut img_hit, mut img_n) = (0, 0, 0, 0);
    let scored = set.scored_steps();
    let mut door_recon = Masked::default();
    let mut door_gen = Masked::default();
    let doors = matches!(set.kind, EnvKind::MultiDoorsKeys { .. });
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let b = chunk.len();
        let full = set.batch(chunk);
        let tf = model.teacher_forced(store, &full, SampleMode::Mode, &mut rng)?;
        let truth = full.frames.slice_axis(Axis(1), (1..steps + 1).into()).to_owned();
        for (acc, v) in recon.iter_mut().zip(per_step_mse(&tf.recon, &truth)?) {
            *acc += v * b as f64;
        }
        let cq = set.context_query(chunk);
        let im = model
            .imagine(store, &cq.context_frames, &cq.context_actions, &cq.query_actions, SampleMode::Mode, &mut rng)?
            .with_truth(&cq.query_frames)?;
        let g = im.mse_per_step.as_ref().expect("truth given");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Numeric("non-finite imagination error".into()));
        }
        for (acc, v) in gen.iter_mut().zip(g) {
            *acc += v * b as f64;
        }
        let rewards = full.rewards.as_ref().expect("rewards");
        if let Some(l) = &tf.reward_logits {
            let (h, n) = accuracy(l, rewards, &scored, 0);
            inf_hit += h;
            inf_n += n;
        }
        if let Some(l) = &im.reward_logits {
            let (h, n) = accuracy(l, rewards, &scored, c);
            img_hit += h;
            img_n += n;
        }
        let recon4 = tf.recon.view().into_dimensionality::<ndarray::Ix5>().expect("rank 5");
        let truth4 = truth.view().into_dimensionality::<ndarray::Ix5>().expect("rank 5");
        let imag4 = im.frames.view().into_dimensionality::<ndarray::Ix5>().expect("rank 5");
        if doors {
            for (j, &i) in chunk.iter().enumerate() {
                let e = &set.episodes[i];
                let masks = door_masks(set.kind, e.seed, &e.actions, c, set.frame_size)?;
                let tq = truth4.slice(s![j, c.., .., .., ..]);
                door_recon.add(recon4.slice(s![j, c.., .., .., ..]), tq, &masks);
                door_gen.add(imag4.slice(s![j, .., .., .., ..]), tq, &masks);
            }
        }
        if let Some(dir) = dump_dir {
            for (j, &i) in chunk.iter().enumerate() {
                if i < dumps {
                    let truth_q: ArrayD<f32> = cq.query_frames.index_axis(Axis(0), j).to_owned();
                    let pred_q: ArrayD<f32> = im.frames.index_axis(Axis(0), j).to_owned();
                    let (w, h, rgb) = comparison_grid(
                        truth_q.view().into_dimensionality::<Ix4>().expect("rank 4"),
                        pred_q.view().into_dimensionality::<Ix4>().expect("rank 4"),
                    );
                    fs::create_dir_all(dir)?;
                    write_png(&dir.join(format!("episode_{i:04}.png")), w, h, &rgb)?;
                }
            }
        }
        seen += b;
    }
    let n = seen.max(1) as f64;
    recon.iter_mut().for_each(|v| *v /= n);
    gen.iter_mut().for_each(|v| *v /= n);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let gen_mse_at = horizons.iter().filter(|&&h| h >= 1 && h <= q).map(|&h| (h, gen[h - 1])).collect();
    let report = EvalReport {
        model: match model {
            AnyModel::Ssm(_) => "ssm".into(),
            AnyModel::Rssm(_) => "rssm".into(),
        },
        episodes: seen,
        context_len: c,
        query_len: q,
        recon_mse: mean(&recon),
        recon_mse_query: mean(&recon[c..]),
        gen_mse: mean(&gen),
        gen_mse_per_step: gen,
        gen_mse_at,
        inference_accuracy: (inf_n > 0).then(|| inf_hit as f64 / inf_n as f64),
        imagination_accuracy: (img_n > 0).then(|| img_hit as f64 / img_n as f64),
        door_recon_mse: door_recon.mean(),
        door_gen_mse: door_gen.mean(),
    };
    if !report.recon_mse.is_finite() || !report.gen_mse.is_finite() {
        return Err(HarnessError::Numeric("non-finite evaluation error".into()));
    }
    Ok(report)
}

/// Writes `eval.json` and `gen_mse.csv` (one row per imagination step) into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Data(e.to_string()))?;
    fs::write(dir.join("eval.json"), json)?;
    let mut f = fs::File::create(dir.join("gen_mse.csv"))?;
    writeln!(f, "step,gen_mse")?;
    for (i, v) in report.gen_mse_per_step.iter().enumerate() {
        writeln!(f, "{},{v}", i + 1)?;
    }
    Ok(())
}
