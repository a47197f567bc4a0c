//! Dense row-major `f32` tensors.
//!
//! Activations are always `[channels, height, width]`. Parameters use
//! whatever rank they need (`[co, ci, k, k]` for convolutions, `[co]` for
//! biases). Scalars have an empty shape.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                alloc::format!("dims {:?} need {} values, got {}", dims, n, data.len()),
            ));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { dims: Vec::new(), data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(channels, height, width)` of a rank-3 activation.
    pub fn chw(&self) -> (usize, usize, usize) {
        debug_assert_eq!(self.dims.len(), 3, "expected CHW tensor, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, k: f32) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn abs_sum(&self) -> f32 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Spatial average of every channel of a CHW tensor.
    pub fn channel_means(&self) -> Vec<f32> {
        let (c, h, w) = self.chw();
        let n = (h * w) as f32;
        (0..c).map(|k| self.channel(k).iter().sum::<f32>() / n).collect()
    }

    /// Per-pixel argmax over channels, row-major `h * w` labels.
    pub fn argmax_channels(&self) -> Vec<u8> {
        let (c, h, w) = self.chw();
        let hw = h * w;
        (0..hw)
            .map(|p| {
                let mut best = 0;
                let mut best_v = self.data[p];
                for k in 1..c {
                    let v = self.data[k * hw + p];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}
