//! Dense 2-D maps on the output-stride lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel row-major grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ScalarGrid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} grid needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(ScalarGrid {
            height,
            width,
            data,
        })
    }

    /// Builds a grid from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(ScalarGrid {
            height,
            width,
            data: rows.concat(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.width == 0 {
            return vec![Vec::new(); self.height];
        }
        self.data.chunks(self.width).map(<[f64]>::to_vec).collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A multi-channel grid stored channel-major (`channel`, `row`, `col`).
///
/// Per-cell vectors are strided by `height * width`; this matches the layout
/// the convolution and 1x1 projection kernels consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VectorGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        VectorGrid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} grid needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            )));
        }
        Ok(VectorGrid {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a grid whose every cell holds `vector`.
    pub fn broadcast(vector: &[f64], height: usize, width: usize) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(vector.len() * plane);
        for &v in vector {
            data.extend(std::iter::repeat_n(v, plane));
        }
        VectorGrid {
            channels: vector.len(),
            height,
            width,
            data,
        }
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

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// Copies out the vector stored at one cell.
    pub fn cell(&self, row: usize, col: usize) -> Vec<f64> {
        let plane = self.plane_len();
        let offset = row * self.width + col;
        (0..self.channels)
            .map(|c| self.data[c * plane + offset])
            .collect()
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let plane = self.plane_len();
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn plane_grid(&self, channel: usize) -> ScalarGrid {
        ScalarGrid {
            height: self.height,
            width: self.width,
            data: self.plane(channel).to_vec(),
        }
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}
