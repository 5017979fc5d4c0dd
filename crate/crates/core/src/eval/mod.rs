//! Localization distance, adjusted Rand index and the episode-score
//! protocol.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window of the score protocol, in episodes.
pub const SCORE_WINDOW: usize = 40;
/// Window for rolling distance and ARI reports, in observations.
pub const ROLLING_WINDOW: usize = 100;

/// Euclidean distance between two grid locations given as (x, y).
pub fn localization_distance(pred: (usize, usize), truth: (usize, usize)) -> f64 {
    let dx = pred.0 as f64 - truth.0 as f64;
    let dy = pred.1 as f64 - truth.1 as f64;
    dx.hypot(dy)
}

/// Maps a pixel coordinate to a cell index by proportional rescaling of the
/// frame onto `cells` cells.
pub fn rescale_to_grid(pixel: f64, frame_px: usize, cells: usize) -> usize {
    let idx = (pixel / frame_px as f64 * cells as f64).floor() as usize;
    idx.min(cells - 1)
}

/// Ground-truth (x, y) on an attention grid of `grid_h × grid_w` for an
/// avatar occupying world cell (row, col).
pub fn truth_cell(
    row: usize,
    col: usize,
    cell_px: usize,
    frame_px: usize,
    grid_h: usize,
    grid_w: usize,
) -> (usize, usize) {
    let centre = |i: usize| (i * cell_px) as f64 + cell_px as f64 / 2.0;
    (
        rescale_to_grid(centre(col), frame_px, grid_w),
        rescale_to_grid(centre(row), frame_px, grid_h),
    )
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the pair-counting contingency table. Degenerate
/// labelings whose expected index equals its maximum score 1.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    let n = labels_a.len() as u64;
    if n < 2 {
        return Err(Error::Config("adjusted Rand index needs at least two labels".into()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    // integer pair sums keep the result independent of iteration order
    let index: u64 = table.values().map(|&v| v * (v - 1) / 2).sum();
    let sum_a: u64 = rows.values().map(|&v| v * (v - 1) / 2).sum();
    let sum_b: u64 = cols.values().map(|&v| v * (v - 1) / 2).sum();
    let expected = sum_a as f64 * sum_b as f64 / pairs(n);
    let max_index = (sum_a + sum_b) as f64 / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / (max_index - expected))
}

/// Running record of episode returns: mean over the most recent episodes
/// and the best such mean seen so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTracker {
    recent: VecDeque<f64>,
    max_mean: Option<f64>,
    episodes: u64,
    total_steps: u64,
}

impl ScoreTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, episode_return: f64, steps: u64) {
        if self.recent.len() == SCORE_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(episode_return);
        self.episodes += 1;
        self.total_steps += steps;
        // Only full windows compete for the maximum, so a lucky first
        // episode cannot stand in for a 40-episode average.
        if self.recent.len() == SCORE_WINDOW {
            let mean = self.mean().expect("nonempty window");
            self.max_mean = Some(self.max_mean.map_or(mean, |m| m.max(mean)));
        }
    }

    /// Mean of the window; `None` before the first completed episode.
    pub fn mean(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64)
    }

    /// Best mean over a full window; `None` until one has been seen.
    pub fn max_mean(&self) -> Option<f64> {
        self.max_mean
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }
}

/// Mean over the last `capacity` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingMean {
    capacity: usize,
    values: VecDeque<f64>,
}

impl RollingMean {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            values: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().sum::<f64>() / self.values.len() as f64)
    }
}

/// Paired labels of the most recent observations, for a rolling ARI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingLabels {
    capacity: usize,
    predicted: VecDeque<usize>,
    truth: VecDeque<usize>,
}

impl RollingLabels {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            predicted: VecDeque::with_capacity(capacity),
            truth: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, predicted: usize, truth: usize) {
        if self.predicted.len() == self.capacity {
            self.predicted.pop_front();
            self.truth.pop_front();
        }
        self.predicted.push_back(predicted);
        self.truth.push_back(truth);
    }

    pub fn ari(&self) -> Option<f64> {
        if self.predicted.len() < 2 {
            return None;
        }
        let a: Vec<usize> = self.predicted.iter().copied().collect();
        let b: Vec<usize> = self.truth.iter().copied().collect();
        adjusted_rand_index(&a, &b).ok()
    }
}
