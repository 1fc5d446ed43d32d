//! Dense channel-major image buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels × height × width` block of `f32` samples, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Cube {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Cube {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} samples cannot fill {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Cube {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map_inplace(&mut self, f: impl Fn(f32) -> f32) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn same_shape(&self, other: &Cube) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Cube) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Copies the `size × size` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Cube {
        let mut out = Cube::zeros(self.channels, size, size);
        for c in 0..self.channels {
            for y in 0..size {
                let src = (c * self.height + y0 + y) * self.width + x0;
                let dst = (c * size + y) * size;
                out.data[dst..dst + size].copy_from_slice(&self.data[src..src + size]);
            }
        }
        out
    }

    /// Writes `patch` into this cube with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, patch: &Cube, y0: usize, x0: usize) {
        debug_assert_eq!(patch.channels, self.channels);
        let (h, w) = (patch.height, patch.width);
        for c in 0..self.channels {
            for y in 0..h {
                let dst = (c * self.height + y0 + y) * self.width + x0;
                let src = (c * h + y) * w;
                self.data[dst..dst + w].copy_from_slice(&patch.data[src..src + w]);
            }
        }
    }

    /// First non-finite sample as `(channel, row, col)`.
    pub fn find_non_finite(&self) -> Option<(usize, usize, usize)> {
        let n = self.plane_len();
        self.data.iter().position(|v| !v.is_finite()).map(|i| {
            let c = i / n;
            let r = i % n;
            (c, r / self.width, r % self.width)
        })
    }
}

/// A single-band `height × width` map of `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Heatmap {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Mean value inside and outside a boolean mask of the same shape.
    pub fn masked_means(&self, mask: &[bool]) -> (f64, f64) {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.data.iter().zip(mask) {
            if m {
                si += v as f64;
                ni += 1;
            } else {
                so += v as f64;
                no += 1;
            }
        }
        (si / ni.max(1) as f64, so / no.max(1) as f64)
    }
}
