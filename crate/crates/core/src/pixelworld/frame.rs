use ndcompute::Tensor;
use serde::{Deserialize, Serialize};

/// Rendered observation, row-major `height × width × channels`, values in
/// `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, value: &[f64]) {
        let i = (row * self.width + col) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    /// Luminance (ITU-R 601) of an RGB frame; other channel counts are
    /// averaged.
    pub fn to_gray(&self) -> Frame {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| {
                if p.len() == 3 {
                    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
                } else {
                    p.iter().sum::<f64>() / p.len() as f64
                }
            })
            .collect();
        Frame {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Frame {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Frame::zeros(height, width, self.channels);
        for r in 0..height {
            let sr = (r * self.height) / height;
            for c in 0..width {
                let sc = (c * self.width) / width;
                let src = (sr * self.width + sc) * self.channels;
                let dst = (r * width + c) * self.channels;
                out.data[dst..dst + self.channels]
                    .copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Fraction of pixels whose values differ between two equally shaped
    /// frames.
    pub fn differing_pixel_fraction(&self, other: &Frame) -> f64 {
        let differing = self
            .data
            .chunks_exact(self.channels)
            .zip(other.data.chunks_exact(other.channels))
            .filter(|(a, b)| a != b)
            .count();
        differing as f64 / (self.height * self.width) as f64
    }

    /// Stacks frames of identical shape into an NHWC tensor.
    pub fn batch_tensor(frames: &[&Frame]) -> Tensor {
        let [h, w, c] = frames[0].shape();
        let mut data = Vec::with_capacity(frames.len() * h * w * c);
        for f in frames {
            debug_assert_eq!(f.shape(), [h, w, c]);
            data.extend_from_slice(&f.data);
        }
        Tensor::new(vec![frames.len(), h, w, c], data).expect("consistent frame shapes")
    }
}
