//! Scripted episodes: generate a world, run the policy, record frames.

use crate::distracting::{self, gen_distracting_memory};
use crate::doors::{self, gen_multi_doors_keys};
use crate::grid::{Action, EnvKind, GridWorld};
use crate::render::{min_frame_size, render};
use crate::{seeded, EnvError};

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub kind: EnvKind,
    pub seed: u64,
    pub context_len: usize,
    pub frame_size: usize,
    /// (T+1) x H x W x 3, row-major.
    pub frames: Vec<u8>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f32>,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn frame_bytes(&self) -> usize {
        self.frame_size * self.frame_size * 3
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.frames[t * n..(t + 1) * n]
    }
}

pub fn generate_world(kind: EnvKind, seed: u64) -> Result<GridWorld, EnvError> {
    match kind {
        EnvKind::DistractingMemory { width } => gen_distracting_memory(width, seed),
        EnvKind::MultiDoorsKeys { n_keys } => gen_multi_doors_keys(n_keys, seed),
    }
}

/// `(context, query)` lengths shared by every episode of `kind`.
pub fn phase_lengths(kind: EnvKind) -> Result<(usize, usize), EnvError> {
    match kind {
        EnvKind::DistractingMemory { width } => {
            distracting::check_width(width)?;
            Ok(distracting::phase_lengths(width))
        }
        EnvKind::MultiDoorsKeys { n_keys } => {
            let world = gen_multi_doors_keys(n_keys, 0)?;
            Ok((doors::context_actions(&world)?.len(), doors::query_budget(n_keys)?))
        }
    }
}

struct Recorder {
    world: GridWorld,
    size: usize,
    frames: Vec<u8>,
    actions: Vec<u8>,
    rewards: Vec<f32>,
}

impl Recorder {
    fn new(world: GridWorld, size: usize) -> Self {
        let frames = render(&world, size);
        Self { world, size, frames, actions: Vec::new(), rewards: Vec::new() }
    }

    fn push(&mut self, action: Action, reward: u8) {
        self.actions.push(action as u8);
        self.rewards.push(f32::from(reward));
        self.frames.extend(render(&self.world, self.size));
    }

    fn act(&mut self, action: Action) {
        let r = self.world.step(action).reward;
        self.push(action, r);
    }
}

/// Generates one scripted episode.
pub fn generate_episode(kind: EnvKind, seed: u64, frame_size: usize) -> Result<Episode, EnvError> {
    if frame_size < min_frame_size() {
        return Err(EnvError::InvalidParam(format!("frame size must be at least {}", min_frame_size())));
    }
    let world = generate_world(kind, seed)?;
    let mut policy = seeded(seed, 1);
    let mut rec = Recorder::new(world, frame_size);
    let context_len;
    match kind {
        EnvKind::DistractingMemory { width } => {
            let (context, query) = distracting::scripted(width, &mut policy);
            context_len = context.len();
            for a in context.into_iter().chain(query) {
                rec.act(a);
            }
        }
        EnvKind::MultiDoorsKeys { n_keys } => {
            let context = doors::context_actions(&rec.world)?;
            context_len = context.len();
            for a in context {
                rec.act(a);
            }
            let budget = doors::query_budget(n_keys)?;
            for skill in doors::query_skills(n_keys, &mut policy) {
                for a in doors::skill_actions(&rec.world, skill)? {
                    rec.act(a);
                }
            }
            let used = rec.actions.len() - context_len;
            if used > budget {
                return Err(EnvError::Invalid(format!("query used {used} steps, budget {budget}")));
            }
            for _ in used..budget {
                rec.act(doors::PAD);
            }
        }
    }
    Ok(Episode {
        kind,
        seed,
        context_len,
        frame_size,
        frames: rec.frames,
        actions: rec.actions,
        rewards: rec.rewards,
    })
}
