use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cell of a parsed room map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tile {
    Wall,
    Floor,
    /// Floor cell eligible as an episode start.
    Spawn,
    Item,
    Door,
}

impl Tile {
    fn parse(ch: char) -> Option<Tile> {
        Some(match ch {
            '#' => Tile::Wall,
            '.' => Tile::Floor,
            'S' => Tile::Spawn,
            'K' => Tile::Item,
            'D' => Tile::Door,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// ASCII rows: '#' wall, '.' floor, 'K' item, 'D' door, 'S' spawn.
    pub map: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorSpec {
    pub room: usize,
    pub cell: Cell,
    pub to_room: usize,
    /// Floor cell the avatar arrives on.
    pub to_cell: Cell,
    /// Index into `items`; the door blocks until that item is collected.
    #[serde(default)]
    pub requires_item: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub room: usize,
    pub cell: Cell,
    pub value: f64,
    /// Collecting a terminal item ends the episode.
    #[serde(default)]
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSpec {
    pub room: usize,
    pub count: usize,
    /// Bouncing direction of every distractor in this group.
    pub axis: Axis,
}

/// Static description of a pixel world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Frame side in pixels.
    pub frame_px: usize,
    /// Cells per side.
    pub grid: usize,
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub doors: Vec<DoorSpec>,
    #[serde(default)]
    pub items: Vec<ItemSpec>,
    #[serde(default)]
    pub distractors: Vec<DistractorSpec>,
    #[serde(default)]
    pub start_room: usize,
    /// Probability of repeating the previously executed action.
    #[serde(default)]
    pub sticky_prob: f64,
    pub max_steps: usize,
}

/// A validated world: parsed tiles plus lookup tables.
#[derive(Clone, Debug)]
pub struct Layout {
    pub config: WorldConfig,
    pub tiles: Vec<Vec<Tile>>,
    pub spawn_cells: Vec<Cell>,
    pub max_reward: f64,
}

impl Layout {
    pub fn cell_px(&self) -> usize {
        self.config.frame_px / self.config.grid
    }

    pub fn tile(&self, room: usize, cell: Cell) -> Tile {
        self.tiles[room][cell.row * self.config.grid + cell.col]
    }

    pub fn door_at(&self, room: usize, cell: Cell) -> Option<&DoorSpec> {
        self.config
            .doors
            .iter()
            .find(|d| d.room == room && d.cell == cell)
    }

    pub fn item_at(&self, room: usize, cell: Cell) -> Option<usize> {
        self.config
            .items
            .iter()
            .position(|it| it.room == room && it.cell == cell)
    }

    pub fn num_rooms(&self) -> usize {
        self.config.rooms.len()
    }

    /// Cells a distractor can occupy: anything that is not a wall or door.
    pub fn is_open(&self, room: usize, cell: Cell) -> bool {
        !matches!(self.tile(room, cell), Tile::Wall | Tile::Door)
    }

    pub fn validate(config: WorldConfig) -> Result<Layout> {
        let bad = |msg: String| Err(Error::Layout(msg));
        let g = config.grid;
        if g == 0 || config.frame_px == 0 || config.frame_px % g != 0 {
            return bad(format!(
                "frame size {} must be a positive multiple of grid size {g}",
                config.frame_px
            ));
        }
        if !(0.0..=1.0).contains(&config.sticky_prob) {
            return bad(format!("sticky_prob {} outside [0, 1]", config.sticky_prob));
        }
        if config.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if config.rooms.is_empty() {
            return bad("no rooms".into());
        }
        if config.start_room >= config.rooms.len() {
            return bad(format!("start room {} does not exist", config.start_room));
        }
        let mut tiles = Vec::with_capacity(config.rooms.len());
        for (r, room) in config.rooms.iter().enumerate() {
            if room.map.len() != g {
                return bad(format!("room {r}: expected {g} rows, found {}", room.map.len()));
            }
            let mut row_tiles = Vec::with_capacity(g * g);
            for (i, line) in room.map.iter().enumerate() {
                let parsed: Option<Vec<Tile>> = line.chars().map(Tile::parse).collect();
                match parsed {
                    Some(t) if t.len() == g => row_tiles.extend(t),
                    Some(t) => return bad(format!("room {r} row {i}: expected {g} cells, found {}", t.len())),
                    None => return bad(format!("room {r} row {i}: unknown map character in `{line}`")),
                }
            }
            tiles.push(row_tiles);
        }
        let tile = |room: usize, c: Cell| tiles[room][c.row * g + c.col];
        let in_bounds = |c: Cell| c.row < g && c.col < g;

        for (i, it) in config.items.iter().enumerate() {
            if it.room >= tiles.len() || !in_bounds(it.cell) || tile(it.room, it.cell) != Tile::Item {
                return bad(format!("item {i} is not on a 'K' cell"));
            }
            if !(it.value >= 0.0) {
                return bad(format!("item {i} has negative value"));
            }
        }
        for (d, door) in config.doors.iter().enumerate() {
            if door.room >= tiles.len() || !in_bounds(door.cell) || tile(door.room, door.cell) != Tile::Door {
                return bad(format!("door {d} is not on a 'D' cell"));
            }
            if door.to_room >= tiles.len() {
                return bad(format!("door {d} leads to missing room {}", door.to_room));
            }
            if !in_bounds(door.to_cell)
                || !matches!(tile(door.to_room, door.to_cell), Tile::Floor | Tile::Spawn)
            {
                return bad(format!("door {d} arrives on a non-floor cell"));
            }
            if let Some(req) = door.requires_item {
                if req >= config.items.len() {
                    return bad(format!("door {d} requires missing item {req}"));
                }
            }
        }
        for (room, room_tiles) in tiles.iter().enumerate() {
            for (idx, t) in room_tiles.iter().enumerate() {
                let c = Cell::new(idx / g, idx % g);
                let covered = match t {
                    Tile::Item => config.items.iter().any(|it| it.room == room && it.cell == c),
                    Tile::Door => config.doors.iter().any(|d| d.room == room && d.cell == c),
                    _ => true,
                };
                if !covered {
                    return bad(format!("room {room} cell ({}, {}) has no matching spec", c.row, c.col));
                }
            }
        }
        for (i, ds) in config.distractors.iter().enumerate() {
            if ds.room >= tiles.len() {
                return bad(format!("distractor group {i} refers to missing room {}", ds.room));
            }
        }

        let start = &tiles[config.start_room];
        let marked: Vec<Cell> = (0..g * g)
            .filter(|&i| start[i] == Tile::Spawn)
            .map(|i| Cell::new(i / g, i % g))
            .collect();
        let spawn_cells = if marked.is_empty() {
            (0..g * g)
                .filter(|&i| start[i] == Tile::Floor)
                .map(|i| Cell::new(i / g, i % g))
                .collect()
        } else {
            marked
        };
        if spawn_cells.is_empty() {
            return bad("start room has no floor cell to spawn on".into());
        }
        let max_reward = config.items.iter().map(|it| it.value).sum();
        Ok(Layout {
            config,
            tiles,
            spawn_cells,
            max_reward,
        })
    }
}
