//! Segmentation and boundary quality measures.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::losses::BoundaryMap;
use crate::{Error, Result};

/// `C × C` pixel counts, rows indexed by ground truth, columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("ConfusionMatrix", format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::shape("confusion", format!("{} labels vs {} predictions", gt.len(), pred.len())));
        }
        let c = self.classes;
        if let Some(bad) = gt.iter().chain(pred).find(|v| **v as usize >= c) {
            return Err(Error::arg("confusion", format!("label {bad} outside 0..{c}")));
        }
        for (g, p) in gt.iter().zip(pred) {
            self.counts[*g as usize * c + *p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion merge", "class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IouReport {
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Per-class IoU and their mean over classes that occur in the ground truth
/// or the prediction.
pub fn compute_iou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let c = cm.classes;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let union = row + col - tp;
        per_class.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Degenerate("no class occurs in ground truth or prediction".into()));
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport { per_class, miou })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Boundary precision/recall: a predicted boundary pixel (prediction > 0.5)
/// counts as correct when a ground-truth boundary pixel lies within
/// Euclidean distance `tol_px`, and vice versa for recall.
///
/// A ratio with an empty denominator is 1 when the other map is empty too
/// and 0 otherwise.
pub fn boundary_f1(pred: &BoundaryMap, gt: &[u8], tol_px: usize) -> Result<BoundaryScore> {
    let (h, w) = pred.dims();
    if gt.len() != h * w {
        return Err(Error::shape("boundary_f1", format!("{} ground-truth pixels for {h}x{w}", gt.len())));
    }
    let p: Vec<bool> = pred.threshold(0.5);
    let g: Vec<bool> = gt.iter().map(|v| *v != 0).collect();
    let tol2 = (tol_px * tol_px) as f64;
    let dist_to_g = squared_distance_transform(&g, h, w);
    let dist_to_p = squared_distance_transform(&p, h, w);
    let np = p.iter().filter(|v| **v).count();
    let ng = g.iter().filter(|v| **v).count();
    let hit_p = (0..h * w).filter(|&i| p[i] && dist_to_g[i] <= tol2).count();
    let hit_g = (0..h * w).filter(|&i| g[i] && dist_to_p[i] <= tol2).count();
    let ratio = |hit: usize, n: usize, other: usize| {
        if n == 0 {
            if other == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            hit as f64 / n as f64
        }
    };
    let precision = ratio(hit_p, np, ng);
    let recall = ratio(hit_g, ng, np);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(BoundaryScore { precision, recall, f1 })
}

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel (infinite when none is set), by separable lower envelopes of
/// parabolas.
pub fn squared_distance_transform(set: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut d: Vec<f64> = set.iter().map(|s| if *s { 0.0 } else { f64::INFINITY }).collect();
    let mut buf = vec![0.0; h.max(w)];
    for y in 0..h {
        buf[..w].copy_from_slice(&d[y * w..(y + 1) * w]);
        let row = envelope(&buf[..w]);
        d[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    for x in 0..w {
        for y in 0..h {
            buf[y] = d[y * w + x];
        }
        let col = envelope(&buf[..h]);
        for y in 0..h {
            d[y * w + x] = col[y];
        }
    }
    d
}

fn envelope(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return out;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter =
        |a: usize, b: usize| ((f[b] + (b * b) as f64) - (f[a] + (a * a) as f64)) / (2.0 * (b as f64 - a as f64));
    for &q in &sites {
        while let Some(&last) = v.last() {
            let s = inter(last, q);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        } else {
            let s = inter(*v.last().unwrap(), q);
            v.push(q);
            z.push(s);
        }
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *slot = dq * dq + f[v[k]];
    }
    out
}
