//! 3x3 convolution stages with "same" padding, lowered to GEMM via im2col.

use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use crate::grid::VectorGrid;

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Layout of one convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub out_channels: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl StageSpec {
    pub const fn new(out_channels: usize, stride: usize, dilation: usize) -> Self {
        StageSpec {
            out_channels,
            stride,
            dilation,
        }
    }
}

/// A 3x3 convolution followed by ReLU. Padding equals the dilation so the
/// output grid is `ceil(input / stride)` on each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStage {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dilation: usize,
    /// `out_channels x (in_channels * 9)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    pub cols: Vec<f64>,
    pub in_shape: (usize, usize),
}

impl ConvStage {
    pub fn zeros(in_channels: usize, spec: StageSpec) -> Self {
        ConvStage {
            in_channels,
            out_channels: spec.out_channels,
            stride: spec.stride,
            dilation: spec.dilation,
            weight: vec![0.0; spec.out_channels * in_channels * TAPS],
            bias: vec![0.0; spec.out_channels],
        }
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.in_channels * TAPS
    }

    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.stride), width.div_ceil(self.stride))
    }

    pub(crate) fn is_consistent(&self) -> bool {
        self.stride > 0
            && self.dilation > 0
            && self.weight.len() == self.out_channels * self.fan_in()
            && self.bias.len() == self.out_channels
    }

    fn im2col(&self, input: &VectorGrid) -> Vec<f64> {
        let (h, w) = input.shape();
        let (oh, ow) = self.output_shape(h, w);
        let pad = self.dilation as isize;
        let mut cols = vec![0.0; self.fan_in() * oh * ow];
        let src = input.as_slice();
        for c in 0..self.in_channels {
            let plane = &src[c * h * w..(c + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * TAPS + ky * KERNEL + kx) * oh * ow;
                    let dy = (ky * self.dilation) as isize - pad;
                    let dx = (kx * self.dilation) as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize + dx;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], height: usize, width: usize) -> VectorGrid {
        let (oh, ow) = self.output_shape(height, width);
        let pad = self.dilation as isize;
        let mut out = VectorGrid::zeros(self.in_channels, height, width);
        let dst = out.as_mut_slice();
        for c in 0..self.in_channels {
            let plane = &mut dst[c * height * width..(c + 1) * height * width];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * TAPS + ky * KERNEL + kx) * oh * ow;
                    let dy = (ky * self.dilation) as isize - pad;
                    let dx = (kx * self.dilation) as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + dy;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                        let base = iy as usize * width;
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * self.stride) as isize + dx;
                            if ix >= 0 && ix < width as isize {
                                plane[base + ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Convolution + ReLU. Returns the activation and, when requested, the
    /// lowered input needed by [`ConvStage::backward`].
    pub(crate) fn forward(&self, input: &VectorGrid, keep: bool) -> (VectorGrid, Option<StageCache>) {
        debug_assert_eq!(input.channels(), self.in_channels);
        let (h, w) = input.shape();
        let (oh, ow) = self.output_shape(h, w);
        let n = oh * ow;
        let cols = self.im2col(input);
        let mut out = vec![0.0; self.out_channels * n];
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(self.bias[o]);
        }
        gemm(self.out_channels, self.fan_in(), n, &self.weight, false, &cols, false, 1.0, &mut out);
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let out = VectorGrid::from_vec(self.out_channels, oh, ow, out).expect("conv output shape");
        let cache = keep.then_some(StageCache {
            cols,
            in_shape: (h, w),
        });
        (out, cache)
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the post-ReLU activation).
    /// Accumulates into `grad_weight` / `grad_bias` and returns the input
    /// gradient unless `need_input_grad` is false.
    pub(crate) fn backward(
        &self,
        cache: &StageCache,
        output: &VectorGrid,
        grad_out: &mut [f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        need_input_grad: bool,
    ) -> Option<VectorGrid> {
        let n = output.plane_len();
        for (g, &a) in grad_out.iter_mut().zip(output.as_slice()) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        for (o, chunk) in grad_out.chunks(n).enumerate() {
            grad_bias[o] += chunk.iter().sum::<f64>();
        }
        gemm(self.out_channels, n, self.fan_in(), grad_out, false, &cache.cols, true, 1.0, grad_weight);
        if !need_input_grad {
            return None;
        }
        let mut grad_cols = vec![0.0; self.fan_in() * n];
        gemm(self.fan_in(), self.out_channels, n, &self.weight, true, grad_out, false, 0.0, &mut grad_cols);
        Some(self.col2im(&grad_cols, cache.in_shape.0, cache.in_shape.1))
    }
}
