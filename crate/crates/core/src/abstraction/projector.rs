use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pixelworld::Frame;

/// Fixed random projection of resized, flattened frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    shape: [usize; 3],
    dim: usize,
    seed: u64,
    /// Row-major `dim × input_len`.
    matrix: Vec<f64>,
}

impl Projector {
    /// Entries are standard normal draws scaled by `1/√dim`.
    pub fn new(seed: u64, shape: [usize; 3], dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product::<usize>() * dim;
        let scale = 1.0 / (dim as f64).sqrt();
        let matrix = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self {
            shape,
            dim,
            seed,
            matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Projects a frame that already has the projection shape.
    pub fn project(&self, frame: &Frame) -> Result<Vec<f64>> {
        if frame.shape() != self.shape {
            return Err(Error::Shape(format!(
                "projector expects frames of shape {:?}, got {:?}",
                self.shape,
                frame.shape()
            )));
        }
        let n = frame.data.len();
        Ok(self
            .matrix
            .chunks_exact(n)
            .map(|row| row.iter().zip(&frame.data).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Resizes (nearest neighbour) to the projection shape, then projects.
    pub fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        if frame.channels != self.shape[2] {
            return Err(Error::Shape(format!(
                "projector expects {} channels, got {}",
                self.shape[2], frame.channels
            )));
        }
        self.project(&frame.resize_nearest(self.shape[0], self.shape[1]))
    }
}
