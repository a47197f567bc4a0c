use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape3 { c, h, w }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-pixel class distribution. Entries are non-negative and every pixel
/// sums to one within `1e-5`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    shape: Shape3,
    data: Vec<f64>,
}

impl ProbMap {
    pub const SUM_TOL: f64 = 1e-5;

    pub fn new(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() || shape.c < 2 {
            return Err(Error::shape("ProbMap", format!("{} values for {:?}", data.len(), shape)));
        }
        let hw = shape.pixels();
        for p in 0..hw {
            let mut s = 0.0;
            for c in 0..shape.c {
                let v = data[c * hw + p];
                if !(v >= 0.0) {
                    return Err(Error::arg("ProbMap", format!("entry {v} at pixel {p}")));
                }
                s += v;
            }
            if (s - 1.0).abs() > Self::SUM_TOL {
                return Err(Error::arg("ProbMap", format!("pixel {p} sums to {s}")));
            }
        }
        Ok(ProbMap { shape, data })
    }

    /// Builds from an `f32` softmax output.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        Self::new(Shape3::new(c, h, w), t.data().iter().map(|v| *v as f64).collect())
    }

    /// One-hot map of integer labels.
    pub fn one_hot(labels: &[u8], c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Shape3::new(c, h, w), labels_to_onehot(labels, c)?)
    }

    pub fn uniform(shape: Shape3) -> Self {
        ProbMap { shape, data: vec![1.0 / shape.c as f64; shape.len()] }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape.h + y) * self.shape.w + x]
    }

    pub fn argmax(&self) -> Vec<u8> {
        let hw = self.shape.pixels();
        (0..hw)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.shape.c {
                    if self.data[c * hw + p] > self.data[best * hw + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        let s = self.shape;
        Tensor::from_vec(&[s.c, s.h, s.w], self.data.iter().map(|v| *v as f32).collect()).unwrap()
    }
}

/// Elementwise `-P · ln P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfInfoMap {
    pub(crate) shape: Shape3,
    pub(crate) data: Vec<f64>,
}

impl SelfInfoMap {
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sum over channels at one pixel.
    pub fn pixel_sum(&self, p: usize) -> f64 {
        let hw = self.shape.pixels();
        (0..self.shape.c).map(|c| self.data[c * hw + p]).sum()
    }
}

/// Entropy normalised by `ln C`, in `[0, 1]` per pixel, with its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub(crate) h: usize,
    pub(crate) w: usize,
    pub(crate) data: Vec<f64>,
    pub(crate) mean: f64,
}

impl EntropyMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w || data.is_empty() {
            return Err(Error::shape("EntropyMap", format!("{} values for {h}x{w}", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("EntropyMap", "values must lie in [0, 1]"));
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        Ok(EntropyMap { h, w, data, mean })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Image-level entropy `ε`.
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// Soft boundary image with values clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl BoundaryMap {
    pub fn new(h: usize, w: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("BoundaryMap", format!("{} values for {h}x{w}", data.len())));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("BoundaryMap"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(BoundaryMap { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        BoundaryMap { h, w, data: vec![0.0; h * w] }
    }

    pub fn from_binary(h: usize, w: usize, bits: &[u8]) -> Result<Self> {
        Self::new(h, w, bits.iter().map(|&b| if b != 0 { 1.0 } else { 0.0 }).collect())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw();
        if c != 1 {
            return Err(Error::shape("BoundaryMap", format!("{c} channels")));
        }
        Self::new(h, w, t.data().iter().map(|v| *v as f64).collect())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Pixels strictly above `threshold`.
    pub fn threshold(&self, threshold: f64) -> Vec<bool> {
        self.data.iter().map(|v| *v > threshold).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.h, self.w], self.data.iter().map(|v| *v as f32).collect()).unwrap()
    }
}

/// Channel-major one-hot encoding of `labels`.
pub fn labels_to_onehot(labels: &[u8], c: usize) -> Result<Vec<f64>> {
    let hw = labels.len();
    let mut out = vec![0.0; c * hw];
    for (p, &l) in labels.iter().enumerate() {
        if l as usize >= c {
            return Err(Error::arg("labels_to_onehot", format!("label {l} at pixel {p} with {c} classes")));
        }
        out[l as usize * hw + p] = 1.0;
    }
    Ok(out)
}
