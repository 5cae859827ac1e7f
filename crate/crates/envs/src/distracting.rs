//! Distracting Memory: remember the cue color across a hallway of colored distractors.
//!
//! Layout for width `W` (5 rows, `W + 1` columns):
//!
//! ```text
//! ###########
//! ##dd#d#d#T#      d: distractor tiles in the side walls (random)
//! #Coooooooo#      C: cue, o: hallway (columns 2..W-1)
//! ###d##d##T#      T: the two targets, above and below the hallway end
//! ###########
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Action, Cell, Dir, EnvKind, GridWorld, Pose};
use crate::palette::{DISTRACTORS, RESERVED};
use crate::{seeded, EnvError};

/// Probability that a side-wall tile along the hallway becomes a distractor.
const DISTRACTOR_RATE: f64 = 0.35;

pub fn check_width(width: usize) -> Result<(), EnvError> {
    if width < 6 || width % 2 != 0 {
        return Err(EnvError::InvalidParam(format!("distracting memory width must be even and >= 6, got {width}")));
    }
    Ok(())
}

/// Context and query lengths `(2W - 1, W/2 + 1)`.
pub fn phase_lengths(width: usize) -> (usize, usize) {
    (2 * width - 1, width / 2 + 1)
}

pub fn gen_distracting_memory(width: usize, seed: u64) -> Result<GridWorld, EnvError> {
    check_width(width)?;
    let mut rng = seeded(seed, 0);
    let (h, w) = (5, width + 1);
    let mut cells = vec![Cell::Wall; h * w];
    let cue = RESERVED[rng.random_range(0..2)];
    let flip = rng.random_bool(0.5);
    let (top, bottom) = if flip { (RESERVED[0], RESERVED[1]) } else { (RESERVED[1], RESERVED[0]) };
    cells[2 * w + 1] = Cell::Cue(cue);
    for c in 2..width {
        cells[2 * w + c] = Cell::Floor;
    }
    cells[w + width - 1] = Cell::Target(top);
    cells[3 * w + width - 1] = Cell::Target(bottom);
    for row in [1, 3] {
        for c in 2..width - 1 {
            if rng.random_bool(DISTRACTOR_RATE) {
                cells[row * w + c] = Cell::Distractor(DISTRACTORS[rng.random_range(0..DISTRACTORS.len())]);
            }
        }
    }
    let start = Pose { row: 2, col: width / 2 + 1, dir: Dir::West };
    Ok(GridWorld {
        kind: EnvKind::DistractingMemory { width },
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

/// Walk to the west end, turn, walk to the east end, return to the start and face north.
pub fn context_actions(width: usize) -> Vec<Action> {
    use Action::*;
    let start = width / 2 + 1;
    let mut a = Vec::with_capacity(2 * width - 1);
    a.extend(std::iter::repeat_n(Forward, start - 2));
    a.extend([TurnLeft, TurnLeft]);
    a.extend(std::iter::repeat_n(Forward, width - 3));
    a.extend([TurnLeft, TurnLeft]);
    a.extend(std::iter::repeat_n(Forward, width - 1 - start));
    a.push(TurnRight);
    a
}

/// Go to the hallway end and step onto the upper (`upper = true`) or lower target.
pub fn query_actions(width: usize, upper: bool) -> Vec<Action> {
    use Action::*;
    let start = width / 2 + 1;
    let mut a = vec![TurnRight];
    a.extend(std::iter::repeat_n(Forward, width - 1 - start));
    a.push(if upper { TurnLeft } else { TurnRight });
    a.push(Forward);
    a
}

/// Scripted policy: full traversal, then one target chosen uniformly at random.
pub fn scripted(width: usize, policy_rng: &mut ChaCha8Rng) -> (Vec<Action>, Vec<Action>) {
    let upper = policy_rng.random_bool(0.5);
    (context_actions(width), query_actions(width, upper))
}
