use std::io::Write;

use serde::{Deserialize, Serialize};

/// Probability grid over feature cells, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), height * width);
        Self {
            height,
            width,
            probs,
        }
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        Self::new(height, width, vec![1.0 / n as f64; n])
    }

    pub fn one_hot(height: usize, width: usize, row: usize, col: usize) -> Self {
        let mut probs = vec![0.0; height * width];
        probs[row * width + col] = 1.0;
        Self::new(height, width, probs)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// (x, y) = (column, row) of the largest entry; ties go to the lowest
    /// row-major index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Mixes the new attention into the smoothed grid with weight equal to the
/// new map's peak, and reads the location off the smoothed grid. Without
/// history the smoothed grid is the new map.
pub fn localize(alpha: &AttentionMap, smoothed_prev: Option<&AttentionMap>) -> ((usize, usize), AttentionMap) {
    let smoothed = match smoothed_prev {
        None => alpha.clone(),
        Some(prev) => {
            let w = alpha.max();
            let probs = prev
                .probs
                .iter()
                .zip(&alpha.probs)
                .map(|(p, a)| (1.0 - w) * p + w * a)
                .collect();
            AttentionMap::new(alpha.height, alpha.width, probs)
        }
    };
    (smoothed.argmax(), smoothed)
}

pub fn write_heatmap_header<W: Write + ?Sized>(w: &mut W, cells: usize) -> std::io::Result<()> {
    write!(w, "step,actor")?;
    for i in 0..cells {
        write!(w, ",a{i}")?;
    }
    writeln!(w)
}

/// One CSV row: step, actor, then the grid values row-major.
pub fn write_heatmap_row<W: Write + ?Sized>(w: &mut W, step: u64, actor: usize, map: &AttentionMap) -> std::io::Result<()> {
    write!(w, "{step},{actor}")?;
    for p in &map.probs {
        write!(w, ",{p}")?;
    }
    writeln!(w)
}
