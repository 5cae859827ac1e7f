//! Skill-level model predictive control on Multi Doors Keys.
//!
//! A task is a world seed and a target door. After the scripted context the
//! planner scores every (pick key, try door) pair by imagining it and comparing
//! the final frame with a goal image, executes the first skill of the best
//! pair, then replans over single door attempts.

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use pswm_core::{ParamStore, Rng, SampleMode, WorldModel};
use pswm_envs::doors::{self, skill_actions, Skill, PAD};
use pswm_envs::{gen_multi_doors_keys, render, Action, Cell, GridWorld};
use serde::{Deserialize, Serialize};

use crate::model::AnyModel;
use crate::{HarnessError, Result};

/// Predicts the last frame after each candidate action sequence.
pub trait Imaginer {
    /// `history` is every action taken so far from the initial state.
    /// Returns one `size * size * 3` frame in `[0, 1]` per candidate.
    fn final_frames(&mut self, world: &GridWorld, history: &[Action], candidates: &[Vec<Action>]) -> Result<Vec<Vec<f32>>>;
}

fn to_float(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| f32::from(b) / 255.0).collect()
}

fn replay(seed: u64, n_keys: usize, actions: &[Action]) -> Result<GridWorld> {
    let mut w = gen_multi_doors_keys(n_keys, seed)?;
    for &a in actions {
        w.step(a);
    }
    Ok(w)
}

/// The environment itself as a world model.
pub struct Oracle {
    pub frame_size: usize,
}

impl Imaginer for Oracle {
    fn final_frames(&mut self, world: &GridWorld, history: &[Action], candidates: &[Vec<Action>]) -> Result<Vec<Vec<f32>>> {
        let n = world.kind.param();
        candidates
            .iter()
            .map(|c| {
                let mut w = replay(world.seed, n, history)?;
                for &a in c {
                    w.step(a);
                }
                Ok(to_float(&render(&w, self.frame_size)))
            })
            .collect()
    }
}

/// A trained world model, conditioned on the frames observed so far.
pub struct ModelImaginer<'a> {
    pub model: &'a AnyModel,
    pub store: &'a ParamStore<f32>,
    pub frame_size: usize,
}

impl Imaginer for ModelImaginer<'_> {
    fn final_frames(&mut self, world: &GridWorld, history: &[Action], candidates: &[Vec<Action>]) -> Result<Vec<Vec<f32>>> {
        let s = self.frame_size;
        let per = s * s * 3;
        let n = world.kind.param();
        // observed frames of the history, replayed from the seed
        let mut w = gen_multi_doors_keys(n, world.seed)?;
        let mut seen = to_float(&render(&w, s));
        for &a in history {
            w.step(a);
            seen.extend(to_float(&render(&w, s)));
        }
        let b = candidates.len();
        let c = history.len();
        let q = candidates.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut frames = Vec::with_capacity(b * seen.len());
        for _ in 0..b {
            frames.extend_from_slice(&seen);
        }
        let frames = ArrayD::from_shape_vec(IxDyn(&[b, c + 1, s, s, 3]), frames).expect("frame layout");
        let ctx = Array2::from_shape_fn((b, c), |(_, t)| history[t] as usize);
        let query = Array2::from_shape_fn((b, q), |(i, t)| candidates[i].get(t).copied().unwrap_or(PAD) as usize);
        let im = self.model.imagine(self.store, &frames, &ctx, &query, SampleMode::Mode, &mut Rng::new(0))?;
        let last = im.frames.index_axis(Axis(1), q - 1).to_owned();
        Ok((0..b).map(|i| last.index_axis(Axis(0), i).iter().copied().take(per).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub seed: u64,
    pub target_door: usize,
    pub plan: Vec<String>,
    pub success: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcReport {
    pub tasks: Vec<TaskOutcome>,
    pub successes: usize,
    pub success_rate: f64,
}

fn skill_name(s: Skill) -> String {
    match s {
        Skill::PickKey(i) => format!("pick_key({i})"),
        Skill::TryDoor(j) => format!("try_door({j})"),
    }
}

/// Task `index` of the evaluation set: the world seed and target door.
pub fn task(base_seed: u64, index: usize, n_keys: usize) -> (u64, usize) {
    let seed = base_seed.wrapping_add(index as u64);
    (seed, index % n_keys)
}

/// Goal image: the world after the context, picking the first matching key
/// and unlocking the target door.
pub fn goal_image(world: &GridWorld, target: usize, frame_size: usize) -> Result<Vec<f32>> {
    let (dr, dc) = doors::door_position(target);
    let color = match world.cell(dr, dc) {
        Cell::Door { color, .. } => color,
        other => return Err(HarnessError::Data(format!("door {target} is {other:?}"))),
    };
    let key = (0..world.kind.param())
        .find(|&i| {
            let (r, c) = doors::key_position(i);
            world.cell(r, c) == Cell::Key(color)
        })
        .ok_or_else(|| HarnessError::Data(format!("no key opens door {target}")))?;
    let mut w = world.clone();
    doors::run_skill(&mut w, Skill::PickKey(key))?;
    doors::run_skill(&mut w, Skill::TryDoor(target))?;
    Ok(to_float(&render(&w, frame_size)))
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x.clamp(0.0, 1.0)) - f64::from(y)).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Index of the lowest-scoring candidate; ties go to the first.
fn best(frames: &[Vec<f32>], goal: &[f32]) -> usize {
    let scores: Vec<f64> = frames.iter().map(|f| mse(f, goal)).collect();
    (0..scores.len()).fold(0, |b, i| if scores[i] < scores[b] { i } else { b })
}

/// All length-2 candidates for the first stage.
pub fn first_stage(n_keys: usize) -> Vec<(Skill, Skill)> {
    (0..n_keys).flat_map(|i| (0..n_keys).map(move |j| (Skill::PickKey(i), Skill::TryDoor(j)))).collect()
}

/// Runs one task. Unreachable skills count as failure.
pub fn run_task(imaginer: &mut impl Imaginer, n_keys: usize, seed: u64, target: usize, frame_size: usize) -> TaskOutcome {
    let mut plan = Vec::new();
    let result = (|| -> Result<bool> {
        let mut world = gen_multi_doors_keys(n_keys, seed)?;
        let mut history = doors::context_actions(&world)?;
        for &a in &history {
            world.step(a);
        }
        let goal = goal_image(&world, target, frame_size)?;

        let pairs = first_stage(n_keys);
        let mut candidates = Vec::with_capacity(pairs.len());
        for &(k, d) in &pairs {
            let mut w = world.clone();
            let mut acts = doors::run_skill(&mut w, k)?.0;
            acts.extend(skill_actions(&w, d)?);
            candidates.push(acts);
        }
        let first = pairs[best(&imaginer.final_frames(&world, &history, &candidates)?, &goal)].0;
        plan.push(skill_name(first));
        history.extend(doors::run_skill(&mut world, first)?.0);

        let options: Vec<Skill> = (0..n_keys).map(Skill::TryDoor).collect();
        let candidates = options.iter().map(|&d| skill_actions(&world, d)).collect::<std::result::Result<Vec<_>, _>>()?;
        let second = options[best(&imaginer.final_frames(&world, &history, &candidates)?, &goal)];
        plan.push(skill_name(second));
        doors::run_skill(&mut world, second)?;

        let (dr, dc) = doors::door_position(target);
        Ok(matches!(world.cell(dr, dc), Cell::Door { locked: false, .. }))
    })();
    match result {
        Ok(success) => TaskOutcome { seed, target_door: target, plan, success, error: None },
        Err(e) => TaskOutcome { seed, target_door: target, plan, success: false, error: Some(e.to_string()) },
    }
}

/// Runs `tasks` tasks starting at `base_seed`.
pub fn run_tasks(imaginer: &mut impl Imaginer, n_keys: usize, base_seed: u64, tasks: usize, frame_size: usize) -> Result<MpcReport> {
    doors::check_keys(n_keys)?;
    let tasks: Vec<TaskOutcome> = (0..tasks)
        .map(|i| {
            let (seed, target) = task(base_seed, i, n_keys);
            run_task(imaginer, n_keys, seed, target, frame_size)
        })
        .collect();
    let successes = tasks.iter().filter(|t| t.success).count();
    let success_rate = successes as f64 / tasks.len().max(1) as f64;
    Ok(MpcReport { tasks, successes, success_rate })
}
