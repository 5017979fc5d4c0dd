//! Deterministic grid worlds rendered to pixels: a controllable avatar,
//! uncontrollable bouncing distractors, rooms with distinct palettes and
//! sparse reward items.

mod frame;
mod layout;
mod presets;
mod world;

pub use frame::Frame;
pub use layout::{Axis, Cell, DistractorSpec, DoorSpec, ItemSpec, Layout, RoomSpec, Tile, WorldConfig};
pub use presets::{preset, PRESET_NAMES};
pub use world::{Action, Distractor, StepInfo, StepResult, World, WorldState, NUM_ACTIONS};
