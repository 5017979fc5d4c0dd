//! Contingency-aware exploration: an attentive inverse-dynamics model that
//! finds the controllable avatar in pixel observations, a count-based bonus
//! over the abstraction (x, y, context, cumulative reward), actor-critic
//! trainers and synthetic pixel worlds with known ground truth.

pub mod abstraction;
pub mod adm;
pub mod agent;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nets;
pub mod pixelworld;
pub mod seeds;

pub use error::{Error, Result};
