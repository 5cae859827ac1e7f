//! Breadth-first navigation over (position, heading).

use std::collections::VecDeque;

use crate::grid::{Action, GridWorld, Pose};

const MOVES: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];

fn advance(world: &GridWorld, p: Pose, a: Action) -> Pose {
    match a {
        Action::TurnLeft => Pose { dir: p.dir.left(), ..p },
        Action::TurnRight => Pose { dir: p.dir.right(), ..p },
        Action::Forward => match p.ahead(world.height, world.width) {
            // targets end the episode, so the navigator never walks over them
            Some((r, c)) if world.cell(r, c) == crate::grid::Cell::Floor => Pose { row: r, col: c, ..p },
            _ => p,
        },
        Action::Interact => p,
    }
}

/// Shortest action sequence from `from` to any pose satisfying `goal`.
pub fn shortest_path(world: &GridWorld, from: Pose, goal: impl Fn(Pose) -> bool) -> Option<Vec<Action>> {
    let idx = |p: Pose| (p.row * world.width + p.col) * 4 + p.dir.index();
    let mut prev: Vec<Option<(usize, Action)>> = vec![None; world.height * world.width * 4];
    let mut seen = vec![false; prev.len()];
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(p) = queue.pop_front() {
        if goal(p) {
            let mut actions = Vec::new();
            let mut cur = idx(p);
            while let Some((before, a)) = prev[cur] {
                actions.push(a);
                cur = before;
            }
            actions.reverse();
            return Some(actions);
        }
        for a in MOVES {
            let q = advance(world, p, a);
            let qi = idx(q);
            if !seen[qi] {
                seen[qi] = true;
                prev[qi] = Some((idx(p), a));
                queue.push_back(q);
            }
        }
    }
    None
}

/// Path to a pose facing `(row, col)` from an adjacent cell.
pub fn path_to_face(world: &GridWorld, from: Pose, row: usize, col: usize) -> Option<Vec<Action>> {
    shortest_path(world, from, |p| p.ahead(world.height, world.width) == Some((row, col)))
}

/// Path back to an exact pose.
pub fn path_to_pose(world: &GridWorld, from: Pose, to: Pose) -> Option<Vec<Action>> {
    shortest_path(world, from, |p| p == to)
}

/// Applies `actions` to a copy of the world pose only (no interaction effects).
pub fn walk(world: &GridWorld, from: Pose, actions: &[Action]) -> Pose {
    actions.iter().fold(from, |p, &a| advance(world, p, a))
}

