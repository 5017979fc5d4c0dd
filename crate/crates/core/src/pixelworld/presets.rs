use super::layout::{Axis, Cell, DistractorSpec, DoorSpec, ItemSpec, RoomSpec, WorldConfig};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 4] = ["corridor", "four-rooms-sparse", "key-door", "corridor-160"];

fn room(rows: &[&str]) -> RoomSpec {
    RoomSpec {
        map: rows.iter().map(|r| r.to_string()).collect(),
    }
}

fn door(room: usize, at: (usize, usize), to_room: usize, to: (usize, usize)) -> DoorSpec {
    DoorSpec {
        room,
        cell: Cell::new(at.0, at.1),
        to_room,
        to_cell: Cell::new(to.0, to.1),
        requires_item: None,
    }
}

/// Open room with a border wall, `grid` cells per side.
fn open_room(grid: usize) -> RoomSpec {
    let mut rows = vec!["#".repeat(grid)];
    for _ in 1..grid - 1 {
        rows.push(format!("#{}#", ".".repeat(grid - 2)));
    }
    rows.push("#".repeat(grid));
    RoomSpec { map: rows }
}

/// Single room crossed by horizontally moving distractors.
pub fn corridor() -> WorldConfig {
    WorldConfig {
        frame_px: 36,
        grid: 9,
        rooms: vec![open_room(9)],
        doors: vec![],
        items: vec![],
        distractors: vec![DistractorSpec {
            room: 0,
            count: 3,
            axis: Axis::Horizontal,
        }],
        start_room: 0,
        sticky_prob: 0.0,
        max_steps: 500,
    }
}

/// Corridor at 160 pixels per side, matching the large encoder preset.
pub fn corridor_160() -> WorldConfig {
    WorldConfig {
        frame_px: 160,
        grid: 10,
        rooms: vec![open_room(10)],
        ..corridor()
    }
}

/// Four rooms in a 2×2 arrangement. The episode starts in the top-left room
/// and the only reward sits in the far corner of the bottom-right room.
pub fn four_rooms_sparse() -> WorldConfig {
    let rooms = vec![
        room(&[
            "#########",
            "#SSS....#",
            "#SSS....#",
            "#SSS....#",
            "#.......D",
            "#.......#",
            "#.......#",
            "#.......#",
            "####D####",
        ]),
        room(&[
            "#########",
            "#.......#",
            "#.......#",
            "#.......#",
            "D.......#",
            "#.......#",
            "#.......#",
            "#.......#",
            "####D####",
        ]),
        room(&[
            "####D####",
            "#.......#",
            "#.......#",
            "#.......#",
            "#.......D",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########",
        ]),
        room(&[
            "####D####",
            "#.......#",
            "#.......#",
            "#.......#",
            "D.......#",
            "#.......#",
            "#.......#",
            "#......K#",
            "#########",
        ]),
    ];
    let doors = vec![
        door(0, (4, 8), 1, (4, 1)),
        door(0, (8, 4), 2, (1, 4)),
        door(1, (4, 0), 0, (4, 7)),
        door(1, (8, 4), 3, (1, 4)),
        door(2, (0, 4), 0, (7, 4)),
        door(2, (4, 8), 3, (4, 1)),
        door(3, (0, 4), 1, (7, 4)),
        door(3, (4, 0), 2, (4, 7)),
    ];
    WorldConfig {
        frame_px: 36,
        grid: 9,
        rooms,
        doors,
        items: vec![ItemSpec {
            room: 3,
            cell: Cell::new(7, 7),
            value: 1.0,
            terminal: true,
        }],
        distractors: (0..4)
            .map(|r| DistractorSpec {
                room: r,
                count: 1,
                axis: if r % 2 == 0 { Axis::Horizontal } else { Axis::Vertical },
            })
            .collect(),
        start_room: 0,
        sticky_prob: 0.0,
        // the shortest path to the goal is about 22 moves; at 60 steps random
        // play practically never reaches it
        max_steps: 60,
    }
}

/// A key in the first room unlocks the door to the room holding the goal.
pub fn key_door() -> WorldConfig {
    let rooms = vec![
        room(&[
            "#########",
            "#K......#",
            "#.......#",
            "#.......#",
            "#...S...D",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########",
        ]),
        room(&[
            "#########",
            "#.......#",
            "#.......#",
            "#.......#",
            "D......K#",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########",
        ]),
    ];
    let mut locked = door(0, (4, 8), 1, (4, 1));
    locked.requires_item = Some(0);
    WorldConfig {
        frame_px: 36,
        grid: 9,
        rooms,
        doors: vec![locked, door(1, (4, 0), 0, (4, 7))],
        items: vec![
            ItemSpec {
                room: 0,
                cell: Cell::new(1, 1),
                value: 1.0,
                terminal: false,
            },
            ItemSpec {
                room: 1,
                cell: Cell::new(4, 7),
                value: 1.0,
                terminal: true,
            },
        ],
        distractors: vec![DistractorSpec {
            room: 1,
            count: 1,
            axis: Axis::Vertical,
        }],
        start_room: 0,
        sticky_prob: 0.0,
        max_steps: 200,
    }
}

pub fn preset(name: &str) -> Result<WorldConfig> {
    match name {
        "corridor" => Ok(corridor()),
        "corridor-160" => Ok(corridor_160()),
        "four-rooms-sparse" => Ok(four_rooms_sparse()),
        "key-door" => Ok(key_door()),
        other => Err(Error::Config(format!(
            "unknown world preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
