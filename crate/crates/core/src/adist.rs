//! Proxy A-distance between two feature populations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng;
use crate::{Error, Result};

/// Minimum number of vectors per domain.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FeatureTag {
    /// Pooled semantic bottleneck.
    Semantic,
    /// Pooled last-layer edge features.
    Edge,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ADistanceReport {
    /// Held-out error of the domain classifier.
    pub error: f64,
    pub a_distance: f64,
    pub tag: FeatureTag,
    pub n_source: usize,
    pub n_target: usize,
}

impl ADistanceReport {
    pub fn from_error(error: f64) -> f64 {
        2.0 * (1.0 - 2.0 * error)
    }
}

/// Linear soft-margin SVM (hinge loss, `C`) trained by dual coordinate
/// descent; the bias is learned as the weight of a constant feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], c: f64, max_epochs: usize) -> Self {
        let d = xs.first().map_or(0, |x| x.len());
        let mut w = vec![0.0; d + 1];
        let mut a = vec![0.0; xs.len()];
        let q: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
        let dot = |w: &[f64], x: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d];
        for _ in 0..max_epochs {
            let mut max_step: f64 = 0.0;
            for i in 0..xs.len() {
                let g = ys[i] * dot(&w, &xs[i]) - 1.0;
                let pg = if a[i] == 0.0 {
                    g.min(0.0)
                } else if a[i] == c {
                    g.max(0.0)
                } else {
                    g
                };
                if pg.abs() > 1e-12 {
                    let old = a[i];
                    a[i] = (old - g / q[i]).clamp(0.0, c);
                    let delta = (a[i] - old) * ys[i];
                    for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                        *wj += delta * xj;
                    }
                    w[d] += delta;
                    max_step = max_step.max(pg.abs());
                }
            }
            if max_step < 1e-6 {
                break;
            }
        }
        let bias = w[d];
        w.truncate(d);
        LinearSvm { weights: w, bias }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

/// Trains a domain classifier on half of each population and reports its
/// error on the other half as `d̂_A = 2(1 − 2ε)`.
///
/// Each population is split with the same seeded permutation, and features
/// are standardised with statistics of the training half, so swapping the
/// two populations leaves `|d̂_A|` unchanged.
pub fn a_distance(src: &[Vec<f64>], tgt: &[Vec<f64>], tag: FeatureTag, seed: u64) -> Result<ADistanceReport> {
    if src.len() < MIN_SAMPLES || tgt.len() < MIN_SAMPLES {
        return Err(Error::arg(
            "a_distance",
            format!("need at least {MIN_SAMPLES} vectors per domain, got {} and {}", src.len(), tgt.len()),
        ));
    }
    let d = src[0].len();
    if d == 0 || src.iter().chain(tgt).any(|v| v.len() != d) {
        return Err(Error::shape("a_distance", "feature vectors must share a positive dimension"));
    }
    if src.iter().chain(tgt).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("a_distance features"));
    }
    let split = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::stream(seed, rng::streams::SPLIT), &mut idx);
        let (a, b) = idx.split_at(n / 2);
        (a.to_vec(), b.to_vec())
    };
    let (src_train, src_test) = split(src.len());
    let (tgt_train, tgt_test) = split(tgt.len());
    let mut train: Vec<(&Vec<f64>, f64)> = Vec::new();
    // interleave so that the visiting order does not depend on which
    // population is called the source
    for i in 0..src_train.len().max(tgt_train.len()) {
        if let Some(&j) = src_train.get(i) {
            train.push((&src[j], -1.0));
        }
        if let Some(&j) = tgt_train.get(i) {
            train.push((&tgt[j], 1.0));
        }
    }
    let mut mean = vec![0.0; d];
    for (x, _) in &train {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.len() as f64;
    }
    let mut std = vec![0.0; d];
    for (x, _) in &train {
        for ((s, v), m) in std.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = libm::sqrt(*s / train.len() as f64);
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let norm = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| norm(x)).collect();
    let ys: Vec<f64> = train.iter().map(|(_, y)| *y).collect();
    let svm = LinearSvm::fit(&xs, &ys, 1.0, 1000);
    // a score of exactly zero is a coin flip: half an error
    let mut wrong = 0.0;
    for &j in &src_test {
        let s = svm.decision(&norm(&src[j]));
        wrong += if s > 0.0 {
            1.0
        } else if s == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    for &j in &tgt_test {
        let s = svm.decision(&norm(&tgt[j]));
        wrong += if s < 0.0 {
            1.0
        } else if s == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    let error = (wrong / (src_test.len() + tgt_test.len()) as f64).min(1.0);
    Ok(ADistanceReport {
        error,
        a_distance: ADistanceReport::from_error(error),
        tag,
        n_source: src.len(),
        n_target: tgt.len(),
    })
}
