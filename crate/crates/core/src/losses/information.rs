use alloc::vec;
use alloc::vec::Vec;

use super::maps::{EntropyMap, ProbMap, SelfInfoMap};
use super::{clamp_log, PROB_EPS};
use crate::{Error, Result};

/// Weighted self-information `-P ln P`, with `0 · ln 0 = 0`.
pub fn self_information(p: &ProbMap) -> SelfInfoMap {
    let data = p.data().iter().map(|&v| -v * clamp_log(v)).collect();
    SelfInfoMap { shape: p.shape(), data }
}

/// Pulls a gradient on the self-information map back onto `P`.
pub fn self_information_vjp(p: &ProbMap, grad_info: &[f64]) -> Result<Vec<f64>> {
    if grad_info.len() != p.data().len() {
        return Err(Error::shape("self_information_vjp", "gradient length"));
    }
    Ok(p.data()
        .iter()
        .zip(grad_info)
        .map(|(&v, &g)| {
            let inner = if v > PROB_EPS { 1.0 } else { 0.0 };
            -g * (clamp_log(v) + inner)
        })
        .collect())
}

/// Per-pixel entropy normalised by `ln C`, and its mean over pixels.
pub fn entropy(p: &ProbMap) -> EntropyMap {
    let s = p.shape();
    let hw = s.pixels();
    let norm = 1.0 / libm::log(s.c as f64);
    let mut data = vec![0.0; hw];
    for c in 0..s.c {
        let plane = &p.data()[c * hw..(c + 1) * hw];
        for (e, &v) in data.iter_mut().zip(plane) {
            *e -= v * clamp_log(v);
        }
    }
    for e in &mut data {
        *e = (*e * norm).clamp(0.0, 1.0);
    }
    let mean = data.iter().sum::<f64>() / hw as f64;
    EntropyMap { h: s.h, w: s.w, data, mean }
}

/// Pulls a gradient on the entropy map back onto `P`.
pub fn entropy_vjp(p: &ProbMap, grad_entropy: &[f64]) -> Result<Vec<f64>> {
    let s = p.shape();
    let hw = s.pixels();
    if grad_entropy.len() != hw {
        return Err(Error::shape("entropy_vjp", "gradient length"));
    }
    let norm = 1.0 / libm::log(s.c as f64);
    let mut out = vec![0.0; s.len()];
    for c in 0..s.c {
        for q in 0..hw {
            let v = p.data()[c * hw + q];
            let inner = if v > PROB_EPS { 1.0 } else { 0.0 };
            out[c * hw + q] = -norm * grad_entropy[q] * (clamp_log(v) + inner);
        }
    }
    Ok(out)
}
