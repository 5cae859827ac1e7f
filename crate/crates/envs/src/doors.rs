//! Multi Doors Keys: pick up colored keys and spend them on doors of the same color.
//!
//! Layout for `n` keys (7 rows, `2n + 3` columns): keys along the top row of a
//! room at even columns, doors set into the bottom wall below them, agent
//! starting in the middle of the room facing north. Held keys are not shown.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Action, Cell, Dir, EnvKind, GridWorld, Pose};
use crate::nav::{path_to_face, path_to_pose};
use crate::palette::key_colors;
use crate::{seeded, EnvError};

pub const MAX_KEYS: usize = 8;

pub fn check_keys(n_keys: usize) -> Result<(), EnvError> {
    if n_keys == 0 || n_keys > MAX_KEYS {
        return Err(EnvError::InvalidParam(format!("number of keys must be in 1..={MAX_KEYS}, got {n_keys}")));
    }
    Ok(())
}

pub fn key_position(i: usize) -> (usize, usize) {
    (1, 2 + 2 * i)
}

pub fn door_position(j: usize) -> (usize, usize) {
    (5, 2 + 2 * j)
}

pub fn gen_multi_doors_keys(n_keys: usize, seed: u64) -> Result<GridWorld, EnvError> {
    check_keys(n_keys)?;
    let mut rng = seeded(seed, 0);
    let (h, w) = (7, 2 * n_keys + 3);
    let mut cells = vec![Cell::Wall; h * w];
    for r in 1..5 {
        for c in 1..w - 1 {
            cells[r * w + c] = Cell::Floor;
        }
    }
    let palette = key_colors(n_keys);
    let keys: Vec<_> = (0..n_keys).map(|_| palette[rng.random_range(0..palette.len())]).collect();
    let mut doors = keys.clone();
    doors.shuffle(&mut rng);
    for i in 0..n_keys {
        let (kr, kc) = key_position(i);
        cells[kr * w + kc] = Cell::Key(keys[i]);
        let (dr, dc) = door_position(i);
        cells[dr * w + dc] = Cell::Door { color: doors[i], locked: true };
    }
    let start = Pose { row: 3, col: n_keys + 1, dir: Dir::North };
    Ok(GridWorld {
        kind: EnvKind::MultiDoorsKeys { n_keys },
        seed,
        height: h,
        width: w,
        cells,
        agent: start,
        start,
        inventory: Vec::new(),
        done: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Skill {
    /// Walk to key `i`, pick it up, return to the start pose.
    PickKey(usize),
    /// Walk to door `j`, try to unlock it, return to the start pose.
    TryDoor(usize),
}

fn unreachable(what: String) -> EnvError {
    EnvError::Unreachable(what)
}

/// Action sequence of `skill` from the world's current pose (which should be the start pose).
pub fn skill_actions(world: &GridWorld, skill: Skill) -> Result<Vec<Action>, EnvError> {
    let (target, what) = match skill {
        Skill::PickKey(i) => (key_position(i), format!("key {i}")),
        Skill::TryDoor(j) => (door_position(j), format!("door {j}")),
    };
    let mut actions = path_to_face(world, world.agent, target.0, target.1).ok_or_else(|| unreachable(what.clone()))?;
    let at = crate::nav::walk(world, world.agent, &actions);
    actions.push(Action::Interact);
    // picking a key clears its cell, which can only shorten the way back
    let back = path_to_pose(world, at, world.start).ok_or_else(|| unreachable(format!("start after {what}")))?;
    actions.extend(back);
    Ok(actions)
}

/// Runs `skill` on `world`, returning its actions and rewards.
pub fn run_skill(world: &mut GridWorld, skill: Skill) -> Result<(Vec<Action>, Vec<u8>), EnvError> {
    let actions = skill_actions(world, skill)?;
    let rewards = actions.iter().map(|&a| world.step(a).reward).collect();
    Ok((actions, rewards))
}

/// Context: face every key and then every door without interacting, then return.
pub fn context_actions(world: &GridWorld) -> Result<Vec<Action>, EnvError> {
    let n = world.kind.param();
    let mut pose = world.agent;
    let mut actions = Vec::new();
    let targets = (0..n).map(key_position).chain((0..n).rev().map(door_position));
    for (r, c) in targets {
        let path = path_to_face(world, pose, r, c).ok_or_else(|| unreachable(format!("cell ({r}, {c})")))?;
        pose = crate::nav::walk(world, pose, &path);
        actions.extend(path);
    }
    actions.extend(path_to_pose(world, pose, world.start).ok_or_else(|| unreachable("start".into()))?);
    Ok(actions)
}

/// Upper bound on the query length for `n` keys: every key once, two
/// attempts per key plus one final attempt per door at worst-case door cost.
pub fn query_budget(n_keys: usize) -> Result<usize, EnvError> {
    let world = gen_multi_doors_keys(n_keys, 0)?;
    let keys: usize = (0..n_keys).map(|i| skill_actions(&world, Skill::PickKey(i)).map(|a| a.len())).sum::<Result<_, _>>()?;
    let doors: Vec<usize> = (0..n_keys).map(|j| skill_actions(&world, Skill::TryDoor(j)).map(|a| a.len())).collect::<Result<_, _>>()?;
    let worst = doors.iter().copied().max().unwrap_or(0);
    Ok(keys + 2 * n_keys * worst + doors.iter().sum::<usize>())
}

/// Query skills: keys in random order, each followed by two distinct random
/// door attempts (one if there is a single door), then every door once more.
pub fn query_skills(n_keys: usize, policy_rng: &mut ChaCha8Rng) -> Vec<Skill> {
    let mut order: Vec<usize> = (0..n_keys).collect();
    order.shuffle(policy_rng);
    let mut skills = Vec::new();
    for &k in &order {
        skills.push(Skill::PickKey(k));
        let mut doors: Vec<usize> = (0..n_keys).collect();
        doors.shuffle(policy_rng);
        skills.extend(doors.into_iter().take(2).map(Skill::TryDoor));
    }
    skills.extend((0..n_keys).map(Skill::TryDoor));
    skills
}

/// Padding action: interacting with the empty floor in front of the start pose.
pub const PAD: Action = Action::Interact;
