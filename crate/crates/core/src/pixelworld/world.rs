use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::layout::{Axis, Cell, Layout, Tile, WorldConfig};
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Noop,
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Noop,
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
    ];

    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or(Error::InvalidAction(index))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Noop => (0, 0),
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub room: usize,
    pub cell: Cell,
    pub axis: Axis,
    /// +1 or -1 along the axis.
    pub direction: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub avatar: Cell,
    pub room: usize,
    pub distractors: Vec<Distractor>,
    pub collected: Vec<bool>,
    pub steps: usize,
    pub last_action: Action,
    pub done: bool,
    rng: ChaCha8Rng,
}

/// Ground truth exposed for evaluation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub avatar: Cell,
    pub room: usize,
    /// Action actually applied after the sticky-action draw.
    pub executed: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A validated world with pre-rendered room backgrounds.
#[derive(Clone, Debug)]
pub struct World {
    layout: Layout,
    backgrounds: Vec<Frame>,
}

type Rgb = [f64; 3];

const AVATAR: Rgb = [1.0, 1.0, 1.0];
const DISTRACTOR: Rgb = [0.9, 0.1, 0.1];
const SPRITE_CORE: Rgb = [0.05, 0.05, 0.05];
const ITEM: Rgb = [1.0, 0.84, 0.0];
const DOOR: Rgb = [0.45, 0.27, 0.07];
const LOCKED_DOOR: Rgb = [0.30, 0.15, 0.02];

const ROOM_BASE: [Rgb; 6] = [
    [0.15, 0.25, 0.55],
    [0.20, 0.50, 0.20],
    [0.50, 0.25, 0.50],
    [0.60, 0.45, 0.15],
    [0.15, 0.45, 0.50],
    [0.45, 0.45, 0.45],
];

fn room_base(room: usize) -> Rgb {
    let base = ROOM_BASE[room % ROOM_BASE.len()];
    // cycles beyond the palette get darker variants
    let dim = 1.0 / (1.0 + (room / ROOM_BASE.len()) as f64 * 0.5);
    base.map(|v| v * dim)
}

fn room_stripe(room: usize, row: usize, col: usize) -> bool {
    let period = 3 + room % 3;
    match room % 2 {
        0 => (row + room) % period == 0,
        _ => (col + row / 2 + room) % period == 0,
    }
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let layout = Layout::validate(config)?;
        let backgrounds = (0..layout.num_rooms())
            .map(|r| render_background(&layout, r))
            .collect();
        Ok(Self {
            layout,
            backgrounds,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &WorldConfig {
        &self.layout.config
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        let px = self.layout.config.frame_px;
        [px, px, 3]
    }

    pub fn grid(&self) -> usize {
        self.layout.config.grid
    }

    pub fn num_rooms(&self) -> usize {
        self.layout.num_rooms()
    }

    /// Sum of all configured item values.
    pub fn max_reward(&self) -> f64 {
        self.layout.max_reward
    }

    pub fn reset(&self, seed: u64) -> (WorldState, Frame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spawns = &self.layout.spawn_cells;
        let avatar = spawns[rng.random_range(0..spawns.len())];
        let mut distractors = Vec::new();
        let g = self.grid();
        for group in &self.layout.config.distractors {
            let open: Vec<Cell> = (0..g * g)
                .map(|i| Cell::new(i / g, i % g))
                .filter(|&c| self.layout.is_open(group.room, c))
                .collect();
            for _ in 0..group.count {
                let cell = open[rng.random_range(0..open.len())];
                let direction = if rng.random_bool(0.5) { 1 } else { -1 };
                distractors.push(Distractor {
                    room: group.room,
                    cell,
                    axis: group.axis,
                    direction,
                });
            }
        }
        let state = WorldState {
            avatar,
            room: self.layout.config.start_room,
            distractors,
            collected: vec![false; self.layout.config.items.len()],
            steps: 0,
            last_action: Action::Noop,
            done: false,
            rng,
        };
        let frame = self.render(&state);
        (state, frame)
    }

    pub fn step(&self, state: &mut WorldState, action: usize) -> Result<StepResult> {
        let issued = Action::from_index(action)?;
        if state.done {
            return Err(Error::StepAfterDone);
        }
        // one draw per step keeps the stream aligned whatever the probability
        let u: f64 = state.rng.random();
        let executed = if u < self.layout.config.sticky_prob {
            state.last_action
        } else {
            issued
        };
        state.last_action = executed;

        let mut reward = 0.0;
        let mut terminal = false;
        if let Some(target) = self.neighbour(state.avatar, executed) {
            match self.layout.tile(state.room, target) {
                Tile::Wall => {}
                Tile::Door => {
                    let door = self.layout.door_at(state.room, target).expect("validated door");
                    let unlocked = door.requires_item.map_or(true, |i| state.collected[i]);
                    if unlocked {
                        state.room = door.to_room;
                        state.avatar = door.to_cell;
                    }
                }
                Tile::Item => {
                    state.avatar = target;
                    let idx = self.layout.item_at(state.room, target).expect("validated item");
                    if !state.collected[idx] {
                        state.collected[idx] = true;
                        let item = &self.layout.config.items[idx];
                        reward += item.value;
                        terminal |= item.terminal;
                    }
                }
                Tile::Floor | Tile::Spawn => state.avatar = target,
            }
        }
        for d in &mut state.distractors {
            advance_distractor(&self.layout, d);
        }
        state.steps += 1;
        state.done = terminal || state.steps >= self.layout.config.max_steps;
        Ok(StepResult {
            frame: self.render(state),
            reward,
            done: state.done,
            info: StepInfo {
                avatar: state.avatar,
                room: state.room,
                executed,
            },
        })
    }

    fn neighbour(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dr, dc) = action.delta();
        let g = self.grid() as isize;
        let r = cell.row as isize + dr;
        let c = cell.col as isize + dc;
        (r >= 0 && r < g && c >= 0 && c < g).then(|| Cell::new(r as usize, c as usize))
    }

    pub fn render(&self, state: &WorldState) -> Frame {
        let mut frame = self.backgrounds[state.room].clone();
        let cell_px = self.layout.cell_px();
        for (i, item) in self.layout.config.items.iter().enumerate() {
            if item.room == state.room && !state.collected[i] {
                fill_cell(&mut frame, cell_px, item.cell, ITEM, None);
            }
        }
        for door in &self.layout.config.doors {
            if door.room == state.room {
                if let Some(req) = door.requires_item {
                    let colour = if state.collected[req] { DOOR } else { LOCKED_DOOR };
                    fill_cell(&mut frame, cell_px, door.cell, colour, None);
                }
            }
        }
        for d in state.distractors.iter().filter(|d| d.room == state.room) {
            fill_cell(&mut frame, cell_px, d.cell, DISTRACTOR, Some(SPRITE_CORE));
        }
        fill_cell(&mut frame, cell_px, state.avatar, AVATAR, Some(SPRITE_CORE));
        frame
    }
}

fn advance_distractor(layout: &Layout, d: &mut Distractor) {
    let g = layout.config.grid as isize;
    for _ in 0..2 {
        let (dr, dc) = match d.axis {
            Axis::Horizontal => (0, d.direction as isize),
            Axis::Vertical => (d.direction as isize, 0),
        };
        let r = d.cell.row as isize + dr;
        let c = d.cell.col as isize + dc;
        if r >= 0 && r < g && c >= 0 && c < g {
            let next = Cell::new(r as usize, c as usize);
            if layout.is_open(d.room, next) {
                d.cell = next;
                return;
            }
        }
        d.direction = -d.direction;
    }
}

/// Paints a cell block; with a core colour the middle half becomes a
/// darker square so sprites have internal structure.
fn fill_cell(frame: &mut Frame, cell_px: usize, cell: Cell, colour: Rgb, core: Option<Rgb>) {
    let (r0, c0) = (cell.row * cell_px, cell.col * cell_px);
    let lo = cell_px / 4;
    let hi = cell_px - lo;
    for r in 0..cell_px {
        for c in 0..cell_px {
            let inner = r >= lo && r < hi && c >= lo && c < hi;
            let value = match core {
                Some(k) if inner && cell_px >= 4 => k,
                _ => colour,
            };
            frame.set_pixel(r0 + r, c0 + c, &value);
        }
    }
}

fn render_background(layout: &Layout, room: usize) -> Frame {
    let px = layout.config.frame_px;
    let cell_px = layout.cell_px();
    let base = room_base(room);
    let stripe = base.map(|v| (v * 1.35 + 0.08).min(1.0));
    let wall = base.map(|v| v * 0.35);
    let mut frame = Frame::zeros(px, px, 3);
    for r in 0..px {
        for c in 0..px {
            let cell = Cell::new(r / cell_px, c / cell_px);
            let colour = match layout.tile(room, cell) {
                Tile::Wall => wall,
                Tile::Door => DOOR,
                _ if room_stripe(room, r, c) => stripe,
                _ => base,
            };
            frame.set_pixel(r, c, &colour);
        }
    }
    frame
}
