//! Boundary supervision, prediction-derived boundaries and their agreement.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::maps::{BoundaryMap, Shape3};
use super::{Objective, PROB_EPS};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Class-balanced binary cross-entropy between a predicted boundary map and
/// a binary ground truth.
///
/// With `balanced` the positive term is scaled by `#neg / #pos`. A ground
/// truth with no positives or no negatives falls back to the unweighted
/// form.
pub fn edge_bce(pred: &BoundaryMap, gt: &[u8], balanced: bool) -> Result<Objective> {
    let n = pred.data().len();
    if gt.len() != n {
        return Err(Error::shape("edge_bce", format!("{} targets for {n} pixels", gt.len())));
    }
    if gt.iter().any(|&b| b > 1) {
        return Err(Error::arg("edge_bce", "ground truth must be binary"));
    }
    let pos = gt.iter().filter(|&&b| b == 1).count();
    let neg = n - pos;
    let pos_weight = if !balanced {
        1.0
    } else if pos == 0 || neg == 0 {
        log::info!("edge_bce: ground truth has {pos} positives of {n}; using unweighted BCE");
        1.0
    } else {
        neg as f64 / pos as f64
    };
    let hi = 1.0 - PROB_EPS;
    let nf = n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let p = pred.data()[i].clamp(PROB_EPS, hi);
        if gt[i] == 1 {
            value -= pos_weight * libm::log(p);
            grad[i] = -pos_weight / (p * nf);
        } else {
            value -= libm::log(1.0 - p);
            grad[i] = 1.0 / ((1.0 - p) * nf);
        }
    }
    Ok(Objective { value: value / nf, grad })
}

/// Normalised 5-tap Gaussian (the ±2σ truncation of a unit-σ filter).
pub fn gaussian_kernel(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = libm::exp(-d * d / (2.0 * sigma * sigma));
    }
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Standard Gumbel noise for one `[C, H, W]` logit buffer.
pub fn gumbel_noise(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::gumbel(rng)).collect()
}

/// Mirror index without edge repetition (`d c b | a b c d | c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

struct Plane {
    h: usize,
    w: usize,
}

impl Plane {
    fn blur_x(&self, src: &[f64], k: &[f64; 5]) -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * src[y * self.w + reflect(x as isize + t as isize - 2, self.w)];
                }
                out[y * self.w + x] = acc;
            }
        }
        out
    }

    fn blur_x_adj(&self, dout: &[f64], k: &[f64; 5]) -> Vec<f64> {
        let mut din = vec![0.0; dout.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let d = dout[y * self.w + x];
                for (t, kv) in k.iter().enumerate() {
                    din[y * self.w + reflect(x as isize + t as isize - 2, self.w)] += kv * d;
                }
            }
        }
        din
    }

    fn blur_y(&self, src: &[f64], k: &[f64; 5]) -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    acc += kv * src[reflect(y as isize + t as isize - 2, self.h) * self.w + x];
                }
                out[y * self.w + x] = acc;
            }
        }
        out
    }

    fn blur_y_adj(&self, dout: &[f64], k: &[f64; 5]) -> Vec<f64> {
        let mut din = vec![0.0; dout.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let d = dout[y * self.w + x];
                for (t, kv) in k.iter().enumerate() {
                    din[reflect(y as isize + t as isize - 2, self.h) * self.w + x] += kv * d;
                }
            }
        }
        din
    }

    /// Central differences `(f[i+1] - f[i-1]) / 2` along x and y.
    fn gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; f.len()];
        let mut gy = vec![0.0; f.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let xp = reflect(x as isize + 1, self.w);
                let xm = reflect(x as isize - 1, self.w);
                let yp = reflect(y as isize + 1, self.h);
                let ym = reflect(y as isize - 1, self.h);
                gx[y * self.w + x] = 0.5 * (f[y * self.w + xp] - f[y * self.w + xm]);
                gy[y * self.w + x] = 0.5 * (f[yp * self.w + x] - f[ym * self.w + x]);
            }
        }
        (gx, gy)
    }

    fn gradient_adj(&self, dgx: &[f64], dgy: &[f64]) -> Vec<f64> {
        let mut df = vec![0.0; dgx.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                let xp = reflect(x as isize + 1, self.w);
                let xm = reflect(x as isize - 1, self.w);
                let yp = reflect(y as isize + 1, self.h);
                let ym = reflect(y as isize - 1, self.h);
                df[y * self.w + xp] += 0.5 * dgx[i];
                df[y * self.w + xm] -= 0.5 * dgx[i];
                df[yp * self.w + x] += 0.5 * dgy[i];
                df[ym * self.w + x] -= 0.5 * dgy[i];
            }
        }
        df
    }
}

/// Gradient-magnitude boundary of a stack of class maps, before clamping,
/// with the per-channel derivatives kept for the backward pass.
struct MagnitudeField {
    raw: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    mag: Vec<f64>,
}

fn magnitude_field(maps: &[f64], shape: Shape3, k: &[f64; 5]) -> MagnitudeField {
    let hw = shape.pixels();
    let plane = Plane { h: shape.h, w: shape.w };
    let mut raw = vec![0.0; hw];
    let mut gxs = Vec::with_capacity(shape.len());
    let mut gys = Vec::with_capacity(shape.len());
    let mut mags = Vec::with_capacity(shape.len());
    for c in 0..shape.c {
        let f = plane.blur_y(&plane.blur_x(&maps[c * hw..(c + 1) * hw], k), k);
        let (gx, gy) = plane.gradient(&f);
        for q in 0..hw {
            let m = libm::sqrt(gx[q] * gx[q] + gy[q] * gy[q]);
            raw[q] += m * core::f64::consts::FRAC_1_SQRT_2;
            mags.push(m);
        }
        gxs.extend(gx);
        gys.extend(gy);
    }
    MagnitudeField { raw, gx: gxs, gy: gys, mag: mags }
}

/// Boundary map derived from segmentation logits through a straight-through
/// Gumbel-softmax.
///
/// The forward value uses the hard one-hot sample; [`Self::backward`]
/// returns the exact gradient of the relaxed pipeline in which the one-hot
/// sample is replaced by the Gumbel-softmax probabilities.
#[derive(Debug, Clone)]
pub struct BoundaryDerivation {
    shape: Shape3,
    tau: f64,
    kernel: [f64; 5],
    hard: BoundaryMap,
    soft_probs: Vec<f64>,
    soft_raw: Vec<f64>,
    soft_gx: Vec<f64>,
    soft_gy: Vec<f64>,
    soft_mag: Vec<f64>,
}

/// Derives a boundary map from `[C, H, W]` logits. `noise` is a Gumbel
/// sample of the same length (see [`gumbel_noise`]).
pub fn pred_to_boundary(
    logits: &[f64],
    shape: Shape3,
    tau: f64,
    sigma: f64,
    noise: &[f64],
) -> Result<BoundaryDerivation> {
    if !(tau > 0.0) {
        return Err(Error::arg("pred_to_boundary", format!("temperature must be positive, got {tau}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::arg("pred_to_boundary", format!("gaussian sigma must be positive, got {sigma}")));
    }
    if logits.len() != shape.len() || noise.len() != shape.len() {
        return Err(Error::shape("pred_to_boundary", "logits and noise must match the shape"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pred_to_boundary logits"));
    }
    let hw = shape.pixels();
    let mut soft = vec![0.0; shape.len()];
    let mut hard = vec![0.0; shape.len()];
    for q in 0..hw {
        let mut best = 0;
        let mut m = f64::NEG_INFINITY;
        for c in 0..shape.c {
            let v = (logits[c * hw + q] + noise[c * hw + q]) / tau;
            soft[c * hw + q] = v;
            if v > m {
                m = v;
                best = c;
            }
        }
        let mut z = 0.0;
        for c in 0..shape.c {
            let e = libm::exp(soft[c * hw + q] - m);
            soft[c * hw + q] = e;
            z += e;
        }
        for c in 0..shape.c {
            soft[c * hw + q] /= z;
        }
        hard[best * hw + q] = 1.0;
    }
    let kernel = gaussian_kernel(sigma);
    let hard_field = magnitude_field(&hard, shape, &kernel);
    let soft_field = magnitude_field(&soft, shape, &kernel);
    Ok(BoundaryDerivation {
        shape,
        tau,
        kernel,
        hard: BoundaryMap::new(shape.h, shape.w, hard_field.raw)?,
        soft_probs: soft,
        soft_raw: soft_field.raw,
        soft_gx: soft_field.gx,
        soft_gy: soft_field.gy,
        soft_mag: soft_field.mag,
    })
}

impl BoundaryDerivation {
    /// Forward value computed from the hard one-hot sample.
    pub fn map(&self) -> &BoundaryMap {
        &self.hard
    }

    /// Value of the relaxed pipeline whose gradient [`Self::backward`] returns.
    pub fn soft_map(&self) -> BoundaryMap {
        BoundaryMap::new(self.shape.h, self.shape.w, self.soft_raw.clone()).unwrap()
    }

    /// Pulls `d loss / d map` back onto the logits through the relaxation.
    pub fn backward(&self, grad_map: &[f64]) -> Result<Vec<f64>> {
        let s = self.shape;
        let hw = s.pixels();
        if grad_map.len() != hw {
            return Err(Error::shape("pred_to_boundary backward", "gradient length"));
        }
        let plane = Plane { h: s.h, w: s.w };
        // clamp to [0, 1]; the raw map is never negative
        let draw: Vec<f64> = grad_map
            .iter()
            .zip(&self.soft_raw)
            .map(|(g, r)| if *r < 1.0 { *g * core::f64::consts::FRAC_1_SQRT_2 } else { 0.0 })
            .collect();
        let mut dsoft = vec![0.0; s.len()];
        for c in 0..s.c {
            let off = c * hw;
            let mut dgx = vec![0.0; hw];
            let mut dgy = vec![0.0; hw];
            for q in 0..hw {
                let m = self.soft_mag[off + q];
                if m > 1e-300 {
                    dgx[q] = draw[q] * self.soft_gx[off + q] / m;
                    dgy[q] = draw[q] * self.soft_gy[off + q] / m;
                }
            }
            let df = plane.gradient_adj(&dgx, &dgy);
            let dy = plane.blur_x_adj(&plane.blur_y_adj(&df, &self.kernel), &self.kernel);
            dsoft[off..off + hw].copy_from_slice(&dy);
        }
        // softmax((z + g) / τ)
        let mut dlogits = vec![0.0; s.len()];
        for q in 0..hw {
            let dot: f64 = (0..s.c).map(|c| self.soft_probs[c * hw + q] * dsoft[c * hw + q]).sum();
            for c in 0..s.c {
                let i = c * hw + q;
                dlogits[i] = self.soft_probs[i] * (dsoft[i] - dot) / self.tau;
            }
        }
        Ok(dlogits)
    }
}

/// How the active boundary set is formed from the two maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NPlus {
    #[default]
    Union,
    Intersection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConsistency {
    pub value: f64,
    /// Number of pixels in the active set.
    pub active: usize,
    pub grad_pred: Vec<f64>,
    pub grad_target: Vec<f64>,
}

/// Mean absolute disagreement between two boundary maps over the pixels
/// where either (or both, for [`NPlus::Intersection`]) exceeds `theta`.
pub fn edge_consistency(pred: &BoundaryMap, target: &BoundaryMap, theta: f64, nplus: NPlus) -> Result<EdgeConsistency> {
    if pred.dims() != target.dims() {
        return Err(Error::shape("edge_consistency", format!("{:?} vs {:?}", pred.dims(), target.dims())));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::arg("edge_consistency", format!("threshold must lie in (0, 1), got {theta}")));
    }
    let n = pred.data().len();
    let active: Vec<bool> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, b)| match nplus {
            NPlus::Union => *p > theta || *b > theta,
            NPlus::Intersection => *p > theta && *b > theta,
        })
        .collect();
    let count = active.iter().filter(|a| **a).count();
    let mut grad_pred = vec![0.0; n];
    let mut grad_target = vec![0.0; n];
    if count == 0 {
        return Ok(EdgeConsistency { value: 0.0, active: 0, grad_pred, grad_target });
    }
    let k = 1.0 / count as f64;
    let mut value = 0.0;
    for i in 0..n {
        if active[i] {
            let d = pred.data()[i] - target.data()[i];
            value += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_pred[i] = s * k;
            grad_target[i] = -s * k;
        }
    }
    Ok(EdgeConsistency { value: value * k, active: count, grad_pred, grad_target })
}
