//! Egocentric rendering: a 7x7-cell window centered on the agent, rotated so
//! the agent always faces up.

use crate::grid::{Cell, GridWorld};
use crate::palette::{AGENT, FLOOR, VOID, WALL};

/// Cells visible in each direction from the agent.
pub const VIEW_RADIUS: usize = 3;
pub const VIEW_CELLS: usize = 2 * VIEW_RADIUS + 1;

/// Pixel geometry of a square frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeom {
    pub size: usize,
    pub cell: usize,
    pub offset: usize,
}

impl FrameGeom {
    pub fn new(size: usize) -> Self {
        let cell = size / VIEW_CELLS;
        Self { size, cell, offset: (size - cell * VIEW_CELLS) / 2 }
    }

    /// Top-left pixel of the agent's cell.
    pub fn anchor(&self) -> (usize, usize) {
        let p = self.offset + VIEW_RADIUS * self.cell;
        (p, p)
    }
}

pub fn min_frame_size() -> usize {
    VIEW_CELLS * 3
}

/// World coordinates shown at view cell `(vr, vc)`.
pub fn view_to_world(world: &GridWorld, vr: usize, vc: usize) -> (i32, i32) {
    let ahead = VIEW_RADIUS as i32 - vr as i32;
    let right = vc as i32 - VIEW_RADIUS as i32;
    let (fr, fc) = world.agent.dir.delta();
    let (rr, rc) = world.agent.dir.right().delta();
    (world.agent.row as i32 + ahead * fr + right * rr, world.agent.col as i32 + ahead * fc + right * rc)
}

/// Every world cell visible from the current pose.
pub fn visible_cells(world: &GridWorld) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for vr in 0..VIEW_CELLS {
        for vc in 0..VIEW_CELLS {
            let (r, c) = view_to_world(world, vr, vc);
            if world.get(r, c).is_some() {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

/// RGB bytes of one cell, `cell x cell x 3`, row-major.
fn paint(cell: Option<Cell>, n: usize, out: &mut [u8]) {
    let put = |out: &mut [u8], y: usize, x: usize, rgb: [u8; 3]| {
        out[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&rgb);
    };
    let border = |y: usize, x: usize| y == 0 || x == 0 || y + 1 == n || x + 1 == n;
    let inner = |y: usize, x: usize| y >= n / 4 && x >= n / 4 && y < n - n / 4 && x < n - n / 4;
    for y in 0..n {
        for x in 0..n {
            let rgb = match cell {
                None => VOID,
                Some(Cell::Wall) => WALL,
                Some(Cell::Floor) => FLOOR,
                Some(Cell::Distractor(c) | Cell::Cue(c) | Cell::Target(c)) => c.rgb(),
                Some(Cell::Key(c)) => {
                    if inner(y, x) {
                        c.rgb()
                    } else {
                        FLOOR
                    }
                }
                Some(Cell::Door { color, locked }) => {
                    if locked || border(y, x) {
                        color.rgb()
                    } else {
                        FLOOR
                    }
                }
            };
            put(out, y, x, rgb);
        }
    }
}

/// Renders a `size x size x 3` frame.
pub fn render(world: &GridWorld, size: usize) -> Vec<u8> {
    let g = FrameGeom::new(size);
    let n = g.cell;
    let mut frame = vec![0u8; size * size * 3];
    let mut block = vec![0u8; n * n * 3];
    for vr in 0..VIEW_CELLS {
        for vc in 0..VIEW_CELLS {
            let (r, c) = view_to_world(world, vr, vc);
            paint(world.get(r, c), n, &mut block);
            if vr == VIEW_RADIUS && vc == VIEW_RADIUS {
                // upward triangle
                for y in 0..n {
                    let half = y / 2;
                    let mid = n / 2;
                    for x in mid.saturating_sub(half)..(mid + half + 1).min(n) {
                        block[(y * n + x) * 3..(y * n + x) * 3 + 3].copy_from_slice(&AGENT);
                    }
                }
            }
            for y in 0..n {
                let py = g.offset + vr * n + y;
                let px = g.offset + vc * n;
                let dst = (py * size + px) * 3;
                frame[dst..dst + n * 3].copy_from_slice(&block[y * n * 3..(y + 1) * n * 3]);
            }
        }
    }
    frame
}

/// Pixels (row-major, `size * size`) covered by visible cells matching `pred`.
pub fn cell_mask(world: &GridWorld, size: usize, pred: impl Fn(Cell) -> bool) -> Vec<bool> {
    let g = FrameGeom::new(size);
    let n = g.cell;
    let mut mask = vec![false; size * size];
    for vr in 0..VIEW_CELLS {
        for vc in 0..VIEW_CELLS {
            let (r, c) = view_to_world(world, vr, vc);
            if world.get(r, c).is_some_and(&pred) {
                for y in 0..n {
                    let row = (g.offset + vr * n + y) * size + g.offset + vc * n;
                    mask[row..row + n].fill(true);
                }
            }
        }
    }
    mask
}
