//! Grid cells, headings, actions and the deterministic transition rule.

use crate::palette::Color;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    /// Colored wall tile along the hallway.
    Distractor(Color),
    /// The color to remember; blocks movement.
    Cue(Color),
    /// Terminal square; stepping on it ends the episode.
    Target(Color),
    Key(Color),
    Door { color: Color, locked: bool },
}

impl Cell {
    pub fn passable(self) -> bool {
        matches!(self, Cell::Floor | Cell::Target(_))
    }
}

/// Heading, clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    pub fn left(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn right(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    /// (row, column) offset of one step.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::North => (-1, 0),
            Dir::East => (0, 1),
            Dir::South => (1, 0),
            Dir::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Interact = 3,
}

impl Action {
    pub const COUNT: usize = 4;

    pub fn from_u8(a: u8) -> Option<Action> {
        match a {
            0 => Some(Action::Forward),
            1 => Some(Action::TurnLeft),
            2 => Some(Action::TurnRight),
            3 => Some(Action::Interact),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pose {
    pub row: usize,
    pub col: usize,
    pub dir: Dir,
}

impl Pose {
    /// The cell in front, if it is on the grid.
    pub fn ahead(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let (dr, dc) = self.dir.delta();
        let r = self.row as i32 + dr;
        let c = self.col as i32 + dc;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((r as usize, c as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    DistractingMemory { width: usize },
    MultiDoorsKeys { n_keys: usize },
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::DistractingMemory { .. } => "distracting",
            EnvKind::MultiDoorsKeys { .. } => "doors-keys",
        }
    }

    pub fn param(&self) -> usize {
        match *self {
            EnvKind::DistractingMemory { width } => width,
            EnvKind::MultiDoorsKeys { n_keys } => n_keys,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub reward: u8,
    pub done: bool,
}

/// A fully specified world state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    pub kind: EnvKind,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Row-major cells.
    pub cells: Vec<Cell>,
    pub agent: Pose,
    pub start: Pose,
    /// Held keys, in pickup order.
    pub inventory: Vec<Color>,
    pub done: bool,
}

impl GridWorld {
    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.width + col] = cell;
    }

    /// Cell at signed coordinates; off-grid reads as `None`.
    pub fn get(&self, row: i32, col: i32) -> Option<Cell> {
        (row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width)
            .then(|| self.cell(row as usize, col as usize))
    }

    /// Applies one action. Actions after termination are ignored.
    pub fn step(&mut self, action: Action) -> StepOutcome {
        if self.done {
            return StepOutcome { reward: 0, done: true };
        }
        let mut reward = 0;
        match action {
            Action::TurnLeft => self.agent.dir = self.agent.dir.left(),
            Action::TurnRight => self.agent.dir = self.agent.dir.right(),
            Action::Forward => {
                if let Some((r, c)) = self.agent.ahead(self.height, self.width) {
                    let cell = self.cell(r, c);
                    if cell.passable() {
                        self.agent.row = r;
                        self.agent.col = c;
                        if let Cell::Target(color) = cell {
                            self.done = true;
                            reward = u8::from(self.cue_color() == Some(color));
                        }
                    }
                }
            }
            Action::Interact => {
                if let Some((r, c)) = self.agent.ahead(self.height, self.width) {
                    match self.cell(r, c) {
                        Cell::Key(color) => {
                            self.inventory.push(color);
                            self.set(r, c, Cell::Floor);
                        }
                        Cell::Door { color, locked: true } => {
                            if let Some(i) = self.inventory.iter().position(|&k| k == color) {
                                self.inventory.remove(i);
                                self.set(r, c, Cell::Door { color, locked: false });
                                reward = 1;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        StepOutcome { reward, done: self.done }
    }

    pub fn cue_color(&self) -> Option<Color> {
        self.cells.iter().find_map(|c| match c {
            Cell::Cue(color) => Some(*color),
            _ => None,
        })
    }

    /// Positions of all cells matching `pred`, row-major.
    pub fn find(&self, pred: impl Fn(Cell) -> bool) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| pred(self.cell(r, c)))
            .collect()
    }
}
