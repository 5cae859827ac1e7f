use std::collections::{BTreeMap, HashSet};

use pswm_envs::distracting::{self, context_actions, query_actions};
use pswm_envs::doors::{self, door_position, key_position, query_skills, Skill};
use pswm_envs::palette::{Color, AGENT, DISTRACTORS, RESERVED};
use pswm_envs::render::{self, visible_cells, FrameGeom};
use pswm_envs::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DM10: EnvKind = EnvKind::DistractingMemory { width: 10 };
const MDK3: EnvKind = EnvKind::MultiDoorsKeys { n_keys: 3 };

fn targets(world: &GridWorld) -> Vec<((usize, usize), Color)> {
    world
        .find(|c| matches!(c, Cell::Target(_)))
        .into_iter()
        .map(|(r, c)| match world.cell(r, c) {
            Cell::Target(color) => ((r, c), color),
            _ => unreachable!(),
        })
        .collect()
}

#[test]
fn same_seed_same_world_and_frames() {
    for kind in [DM10, EnvKind::DistractingMemory { width: 40 }, MDK3, EnvKind::MultiDoorsKeys { n_keys: 5 }] {
        for seed in [0, 1, 77, u64::MAX] {
            let a = generate_world(kind, seed).unwrap();
            let b = generate_world(kind, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(render(&a, 32), render(&b, 32));
            assert_eq!(generate_episode(kind, seed, 32).unwrap(), generate_episode(kind, seed, 32).unwrap());
        }
    }
    let distinct: HashSet<Vec<Cell>> = (0..50).map(|s| generate_world(DM10, s).unwrap().cells).collect();
    assert!(distinct.len() > 40, "layouts barely depend on the seed");
}

#[test]
fn cue_matches_exactly_one_target() {
    for seed in 0..300 {
        let w = generate_world(DM10, seed).unwrap();
        let cue = w.cue_color().unwrap();
        let t = targets(&w);
        assert_eq!(t.len(), 2);
        assert_eq!(t.iter().filter(|(_, c)| *c == cue).count(), 1, "seed {seed}");
        assert!(RESERVED.contains(&cue));
    }
}

#[test]
fn distracting_phase_lengths() {
    assert_eq!(distracting::phase_lengths(10), (19, 6));
    assert_eq!(distracting::phase_lengths(100), (199, 51));
    for (width, lens) in [(10, (19, 6)), (100, (199, 51)), (6, (11, 4)), (40, (79, 21))] {
        let kind = EnvKind::DistractingMemory { width };
        assert_eq!(phase_lengths(kind).unwrap(), lens);
        for seed in 0..5 {
            let ep = generate_episode(kind, seed, 32).unwrap();
            assert_eq!(ep.context_len, lens.0);
            assert_eq!(ep.steps(), lens.0 + lens.1);
            assert_eq!(ep.frames.len(), (ep.steps() + 1) * 32 * 32 * 3);
            assert_eq!(ep.rewards.len(), ep.steps());
        }
    }
}

#[test]
fn invalid_params_rejected() {
    for width in [0, 4, 5, 7, 11] {
        assert!(matches!(gen_distracting_memory(width, 0), Err(EnvError::InvalidParam(_))), "width {width}");
        assert!(generate_episode(EnvKind::DistractingMemory { width }, 0, 32).is_err());
    }
    assert!(gen_multi_doors_keys(0, 0).is_err());
    assert!(gen_multi_doors_keys(doors::MAX_KEYS + 1, 0).is_err());
    assert!(generate_episode(DM10, 0, 20).is_err());
}

#[test]
fn distracting_rewards_only_at_the_end() {
    for seed in 0..200 {
        let ep = generate_episode(DM10, seed, 21).unwrap();
        let (last, rest) = ep.rewards.split_last().unwrap();
        assert!(rest.iter().all(|&r| r == 0.0));
        assert!(*last == 0.0 || *last == 1.0);
    }
}

#[test]
fn query_visits_one_target_uniformly() {
    let n = 2000;
    let mut upper = 0;
    let mut rewarded = 0;
    for seed in 0..n {
        let ep = generate_episode(DM10, seed, 21).unwrap();
        let mut w = generate_world(DM10, seed).unwrap();
        let mut visited = Vec::new();
        for (t, &a) in ep.actions.iter().enumerate() {
            let out = w.step(Action::from_u8(a).unwrap());
            if matches!(w.cell(w.agent.row, w.agent.col), Cell::Target(_)) {
                visited.push((w.agent.row, w.agent.col));
            }
            assert_eq!(out.done, t + 1 == ep.steps(), "episode must end exactly at its last step");
        }
        assert_eq!(visited.len(), 1);
        upper += usize::from(visited[0].0 == 1);
        rewarded += (ep.rewards.iter().sum::<f32>() == 1.0) as usize;
    }
    let p = upper as f64 / n as f64;
    // 0.5 +- 4.5 standard errors
    assert!((p - 0.5).abs() < 0.05, "upper target chosen with frequency {p}");
    let q = rewarded as f64 / n as f64;
    assert!((q - 0.5).abs() < 0.05, "rewarded fraction {q}");
}

#[test]
fn context_phase_is_policy_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c1, _) = distracting::scripted(10, &mut rng);
    let (c2, _) = distracting::scripted(10, &mut rng);
    assert_eq!(c1, c2);
    assert_eq!(c1, context_actions(10));
    assert_eq!(query_actions(10, true).len(), query_actions(10, false).len());
}

#[test]
fn distractor_palette_histogram() {
    let mut hist: BTreeMap<Color, usize> = BTreeMap::new();
    for seed in 0..100 {
        let w = generate_world(EnvKind::DistractingMemory { width: 40 }, seed).unwrap();
        for c in &w.cells {
            if let Cell::Distractor(color) = c {
                *hist.entry(*color).or_default() += 1;
            }
        }
    }
    assert_eq!(hist.keys().copied().collect::<Vec<_>>(), DISTRACTORS.to_vec());
    let total: usize = hist.values().sum();
    let mean = total as f64 / 6.0;
    for (color, &n) in &hist {
        assert!((n as f64 - mean).abs() < 0.2 * mean, "{color:?}: {n} of {total}");
        assert!(!RESERVED.contains(color));
    }
}

#[test]
fn render_is_pure_and_agent_anchored() {
    let g = FrameGeom::new(32);
    let (ay, ax) = g.anchor();
    assert_eq!((g.cell, g.offset), (4, 2));
    for kind in [DM10, MDK3] {
        for seed in 0..5 {
            let ep = generate_episode(kind, seed, 32).unwrap();
            let mut w = generate_world(kind, seed).unwrap();
            assert_eq!(ep.frame(0), render(&w, 32).as_slice());
            for t in 0..ep.steps() {
                w.step(Action::from_u8(ep.actions[t]).unwrap());
                let f = render(&w, 32);
                assert_eq!(f, render(&w.clone(), 32));
                assert_eq!(ep.frame(t + 1), f.as_slice(), "frame {} is stale", t + 1);
                for y in 0..g.cell {
                    let x = ax + g.cell / 2;
                    let p = ((ay + y) * 32 + x) * 3;
                    assert_eq!(&f[p..p + 3], &AGENT);
                }
            }
        }
    }
}

#[test]
fn view_is_egocentric() {
    let mut w = generate_world(DM10, 0).unwrap();
    let before = render(&w, 28);
    w.step(Action::TurnLeft);
    let left = render(&w, 28);
    w.step(Action::TurnRight);
    assert_eq!(render(&w, 28), before);
    assert_ne!(left, before);
    // the cue sits straight ahead once the agent reaches the west end
    let mut w = generate_world(DM10, 0).unwrap();
    for _ in 0..4 {
        w.step(Action::Forward);
    }
    let g = FrameGeom::new(28);
    let f = render(&w, 28);
    let cue = w.cue_color().unwrap().rgb();
    let y = g.offset + 2 * g.cell + g.cell / 2;
    let x = g.offset + 3 * g.cell + g.cell / 2;
    assert_eq!(&f[(y * 28 + x) * 3..(y * 28 + x) * 3 + 3], &cue);
}

fn coverage_after_context(kind: EnvKind, seed: u64) -> (usize, usize) {
    let ep = generate_episode(kind, seed, 21).unwrap();
    let mut w = generate_world(kind, seed).unwrap();
    let mut seen = vec![false; w.cells.len()];
    let mark = |w: &GridWorld, seen: &mut Vec<bool>| {
        for (r, c) in visible_cells(w) {
            seen[r * w.width + c] = true;
        }
    };
    mark(&w, &mut seen);
    for &a in &ep.actions[..ep.context_len] {
        w.step(Action::from_u8(a).unwrap());
        mark(&w, &mut seen);
    }
    (seen.iter().filter(|&&s| s).count(), seen.len())
}

#[test]
fn context_reveals_every_cell() {
    for kind in [DM10, EnvKind::DistractingMemory { width: 6 }, EnvKind::DistractingMemory { width: 100 }] {
        for seed in 0..10 {
            let (seen, total) = coverage_after_context(kind, seed);
            assert_eq!(seen, total, "{kind:?} seed {seed}");
        }
    }
    for n in [1, 3, 5, 7] {
        let (seen, total) = coverage_after_context(EnvKind::MultiDoorsKeys { n_keys: n }, 4);
        assert_eq!(seen, total, "{n} keys");
    }
}

#[test]
fn context_actions_have_no_side_effects() {
    for kind in [DM10, MDK3] {
        let ep = generate_episode(kind, 9, 21).unwrap();
        let mut w = generate_world(kind, 9).unwrap();
        let initial = w.clone();
        for &a in &ep.actions[..ep.context_len] {
            assert_eq!(w.step(Action::from_u8(a).unwrap()).reward, 0);
        }
        assert_eq!(w.cells, initial.cells);
        assert_eq!((w.agent.row, w.agent.col), (initial.start.row, initial.start.col));
    }
}

/// Face cell `(r, c)` of a multi-doors world from the room and interact.
fn interact_at(w: &mut GridWorld, r: usize, c: usize) -> u8 {
    let path = nav::path_to_face(w, w.agent, r, c).unwrap();
    for a in path {
        w.step(a);
    }
    w.step(Action::Interact).reward
}

#[test]
fn unlocking_without_key_does_nothing() {
    for seed in 0..20 {
        let mut w = gen_multi_doors_keys(3, seed).unwrap();
        let (r, c) = door_position(1);
        let before = w.cell(r, c);
        assert_eq!(interact_at(&mut w, r, c), 0);
        assert_eq!(w.cell(r, c), before);
        assert!(matches!(before, Cell::Door { locked: true, .. }));
    }
}

#[test]
fn keys_are_consumed() {
    let mut w = gen_multi_doors_keys(3, 0).unwrap();
    let red = Color(0);
    for i in 0..3 {
        let (r, c) = key_position(i);
        w.set(r, c, Cell::Key(if i == 0 { red } else { Color(2) }));
        let (r, c) = door_position(i);
        w.set(r, c, Cell::Door { color: if i == 2 { Color(1) } else { red }, locked: true });
    }
    let (kr, kc) = key_position(0);
    assert_eq!(interact_at(&mut w, kr, kc), 0);
    assert_eq!(w.inventory, vec![red]);
    assert_eq!(w.cell(kr, kc), Cell::Floor);
    let (dr, dc) = door_position(0);
    assert_eq!(interact_at(&mut w, dr, dc), 1);
    assert_eq!(w.cell(dr, dc), Cell::Door { color: red, locked: false });
    assert!(w.inventory.is_empty());
    // second red door stays shut
    let (dr, dc) = door_position(1);
    assert_eq!(interact_at(&mut w, dr, dc), 0);
    assert_eq!(w.cell(dr, dc), Cell::Door { color: red, locked: true });
    // an open door gives nothing more
    let (dr, dc) = door_position(0);
    assert_eq!(interact_at(&mut w, dr, dc), 0);
}

#[test]
fn agent_can_hold_several_keys() {
    let mut w = gen_multi_doors_keys(5, 1).unwrap();
    for i in 0..5 {
        let (r, c) = key_position(i);
        interact_at(&mut w, r, c);
    }
    assert_eq!(w.inventory.len(), 5);
    let mut unlocked = 0;
    for j in 0..5 {
        let (r, c) = door_position(j);
        unlocked += interact_at(&mut w, r, c) as usize;
    }
    // door colors are a permutation of key colors
    assert_eq!(unlocked, 5);
    assert!(w.inventory.is_empty());
}

#[test]
fn doors_keys_episode_shape() {
    let (c, q) = phase_lengths(MDK3).unwrap();
    println!("multi doors keys, 3 keys: context {c}, query {q} (reference 76 | 174)");
    for seed in 0..30 {
        let ep = generate_episode(MDK3, seed, 21).unwrap();
        assert_eq!((ep.context_len, ep.steps() - ep.context_len), (c, q));
        assert!(ep.rewards.iter().all(|&r| r == 0.0 || r == 1.0));
        // every unlock is rewarded once; all keys end up consumed or held
        let mut w = generate_world(MDK3, seed).unwrap();
        for &a in &ep.actions {
            w.step(Action::from_u8(a).unwrap());
        }
        let unlocked = w.find(|c| matches!(c, Cell::Door { locked: false, .. })).len();
        assert_eq!(ep.rewards.iter().sum::<f32>() as usize, unlocked);
        assert_eq!(w.inventory.len() + unlocked, 3);
        assert_eq!(w.agent, w.start);
    }
    for n in [5, 7] {
        let kind = EnvKind::MultiDoorsKeys { n_keys: n };
        let (c, q) = phase_lengths(kind).unwrap();
        println!("multi doors keys, {n} keys: context {c}, query {q}");
        let ep = generate_episode(kind, 2, 21).unwrap();
        assert_eq!(ep.steps(), c + q);
    }
}

#[test]
fn query_ends_by_retrying_every_door() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [3, 5, 7] {
        let skills = query_skills(n, &mut rng);
        let tail: Vec<Skill> = (0..n).map(Skill::TryDoor).collect();
        assert_eq!(&skills[skills.len() - n..], tail.as_slice());
        let picks: HashSet<_> = skills.iter().filter(|s| matches!(s, Skill::PickKey(_))).collect();
        assert_eq!(picks.len(), n);
        assert_eq!(skills.len(), n * 3 + n);
        for chunk in skills[..3 * n].chunks(3) {
            assert!(matches!(chunk[0], Skill::PickKey(_)));
            assert!(matches!((chunk[1], chunk[2]), (Skill::TryDoor(a), Skill::TryDoor(b)) if a != b));
        }
    }
}

#[test]
fn skills_return_to_start() {
    for seed in 0..10 {
        let mut w = gen_multi_doors_keys(3, seed).unwrap();
        for s in [Skill::PickKey(2), Skill::TryDoor(0), Skill::PickKey(0), Skill::TryDoor(2)] {
            doors::run_skill(&mut w, s).unwrap();
            assert_eq!(w.agent, w.start);
        }
        assert!(w.find(|c| matches!(c, Cell::Key(_))).len() == 1);
    }
}

#[test]
fn door_mask_covers_door_pixels() {
    let w = gen_multi_doors_keys(3, 5).unwrap();
    let size = 28;
    let mask = render::cell_mask(&w, size, |c| matches!(c, Cell::Door { .. }));
    let frame = render(&w, size);
    let door_colors: HashSet<[u8; 3]> = w
        .find(|c| matches!(c, Cell::Door { .. }))
        .into_iter()
        .map(|(r, c)| match w.cell(r, c) {
            Cell::Door { color, .. } => color.rgb(),
            _ => unreachable!(),
        })
        .collect();
    let masked = mask.iter().filter(|&&m| m).count();
    // three doors two rows behind the agent, each one cell
    assert_eq!(masked, 3 * 16);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let px: [u8; 3] = frame[i * 3..i * 3 + 3].try_into().unwrap();
            assert!(door_colors.contains(&px));
        }
    }
}
