//! Fixed RGB palettes. Everything is integer so renders are bit-reproducible.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Color(pub u8);

impl Color {
    pub fn rgb(self) -> [u8; 3] {
        COLORS[self.0 as usize]
    }
}

const COLORS: [[u8; 3]; 8] = [
    [230, 40, 40],   // red
    [40, 200, 60],   // green
    [50, 90, 240],   // blue
    [160, 60, 220],  // purple
    [240, 220, 40],  // yellow
    [40, 220, 220],  // cyan
    [250, 140, 20],  // orange
    [250, 120, 190], // pink
];

/// Cue and target colors; never used for distractors.
pub const RESERVED: [Color; 2] = [Color(0), Color(1)];

/// Distractor colors.
pub const DISTRACTORS: [Color; 6] = [Color(2), Color(3), Color(4), Color(5), Color(6), Color(7)];

/// Key and door colors, first `n` used for `n` keys (at most 8).
pub fn key_colors(n: usize) -> &'static [Color] {
    const ALL: [Color; 8] = [Color(0), Color(1), Color(2), Color(4), Color(3), Color(5), Color(6), Color(7)];
    &ALL[..n.clamp(1, 8)]
}

pub const WALL: [u8; 3] = [110, 110, 110];
pub const FLOOR: [u8; 3] = [18, 18, 18];
pub const VOID: [u8; 3] = [0, 0, 0];
pub const AGENT: [u8; 3] = [255, 255, 255];
