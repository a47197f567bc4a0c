use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::maps::{ProbMap, Shape3};
use super::{clamp_log, Objective, PROB_EPS};
use crate::{Error, Result};

/// Max-shifted softmax over the channels of a `[C, H, W]` logit buffer.
pub fn softmax_prob(logits: &[f64], shape: Shape3) -> Result<ProbMap> {
    if logits.len() != shape.len() {
        return Err(Error::shape("softmax_prob", format!("{} logits for {:?}", logits.len(), shape)));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax_prob"));
    }
    let hw = shape.pixels();
    let mut out = vec![0.0; logits.len()];
    for p in 0..hw {
        let m = (0..shape.c).map(|c| logits[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..shape.c {
            let e = libm::exp(logits[c * hw + p] - m);
            out[c * hw + p] = e;
            z += e;
        }
        for c in 0..shape.c {
            out[c * hw + p] /= z;
        }
    }
    ProbMap::new(shape, out)
}

fn check_one_hot(y: &[f64], shape: Shape3, op: &'static str) -> Result<()> {
    if y.len() != shape.len() {
        return Err(Error::shape(op, format!("{} target values for {:?}", y.len(), shape)));
    }
    let hw = shape.pixels();
    for p in 0..hw {
        let mut ones = 0;
        for c in 0..shape.c {
            let v = y[c * hw + p];
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::arg(op, format!("target is not one-hot at pixel {p}")));
            }
        }
        if ones != 1 {
            return Err(Error::arg(op, format!("target is not one-hot at pixel {p}")));
        }
    }
    Ok(())
}

/// Pixel-mean cross-entropy `-Σ_c Y ln P` against a one-hot target.
pub fn cross_entropy_seg(p: &ProbMap, y: &[f64]) -> Result<Objective> {
    let shape = p.shape();
    check_one_hot(y, shape, "cross_entropy_seg")?;
    let n = shape.pixels() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; shape.len()];
    for (i, (&pv, &yv)) in p.data().iter().zip(y).enumerate() {
        if yv != 0.0 {
            value -= clamp_log(pv);
            grad[i] = -1.0 / (n * pv.max(PROB_EPS));
        }
    }
    Ok(Objective { value: value / n, grad })
}

/// Lovász-softmax: mean over the classes present in `labels` of the Lovász
/// extension of the Jaccard loss evaluated at the per-pixel class errors.
pub fn lovasz_softmax(p: &ProbMap, labels: &[u8]) -> Result<Objective> {
    let shape = p.shape();
    let hw = shape.pixels();
    if labels.len() != hw {
        return Err(Error::shape("lovasz_softmax", format!("{} labels for {hw} pixels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= shape.c) {
        return Err(Error::arg("lovasz_softmax", format!("label {l} with {} classes", shape.c)));
    }
    let mut grad = vec![0.0; shape.len()];
    let mut total = 0.0;
    let mut present = 0usize;
    let mut order: Vec<usize> = (0..hw).collect();
    let mut errors = vec![0.0; hw];
    for c in 0..shape.c {
        let fg_count = labels.iter().filter(|&&l| l as usize == c).count();
        if fg_count == 0 {
            continue;
        }
        present += 1;
        let probs = &p.data()[c * hw..(c + 1) * hw];
        for q in 0..hw {
            let fg = if labels[q] as usize == c { 1.0 } else { 0.0 };
            errors[q] = (fg - probs[q]).abs();
        }
        // stable descending sort keeps ties in pixel order
        order.sort_by(|&a, &b| errors[b].partial_cmp(&errors[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));

        let gts = fg_count as f64;
        let mut cum_fg = 0.0;
        let mut cum_bg = 0.0;
        let mut prev_jaccard = 0.0;
        for &q in &order {
            if labels[q] as usize == c {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let intersection = gts - cum_fg;
            let union = gts + cum_bg;
            let jaccard = 1.0 - intersection / union;
            let weight = jaccard - prev_jaccard;
            prev_jaccard = jaccard;
            total += errors[q] * weight;
            let sign = if labels[q] as usize == c { -1.0 } else { 1.0 };
            grad[c * hw + q] = sign * weight;
        }
    }
    if present == 0 {
        return Ok(Objective { value: 0.0, grad });
    }
    let k = 1.0 / present as f64;
    for g in &mut grad {
        *g *= k;
    }
    Ok(Objective { value: total * k, grad })
}

/// Uncertainty-adaptive self-training loss: pixel mean of
/// `(1 - E)² · (-Σ_c Ŷ ln P)` with `E` and `Ŷ` held constant.
pub fn uasl(p: &ProbMap, pseudo: &[f64], entropy: &[f64]) -> Result<Objective> {
    let shape = p.shape();
    check_one_hot(pseudo, shape, "uasl")?;
    let hw = shape.pixels();
    if entropy.len() != hw {
        return Err(Error::shape("uasl", format!("entropy map has {} pixels, image {hw}", entropy.len())));
    }
    let n = hw as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; shape.len()];
    for c in 0..shape.c {
        for (q, e) in entropy.iter().enumerate() {
            let i = c * hw + q;
            if pseudo[i] != 0.0 {
                let wgt = (1.0 - e) * (1.0 - e);
                value -= wgt * clamp_log(p.data()[i]);
                grad[i] = -wgt / (n * p.data()[i].max(PROB_EPS));
            }
        }
    }
    Ok(Objective { value: value / n, grad })
}

/// Cross-entropy against hard pseudo-labels, averaged over the pixels with
/// `keep` set. Fails when nothing is kept.
pub fn masked_cross_entropy(p: &ProbMap, labels: &[u8], keep: &[bool]) -> Result<Objective> {
    let shape = p.shape();
    let hw = shape.pixels();
    if labels.len() != hw || keep.len() != hw {
        return Err(Error::shape(
            "masked_cross_entropy",
            format!("{} labels, {} mask bits for {hw} pixels", labels.len(), keep.len()),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= shape.c) {
        return Err(Error::arg("masked_cross_entropy", format!("label {l} with {} classes", shape.c)));
    }
    let kept = keep.iter().filter(|k| **k).count();
    if kept == 0 {
        return Err(Error::Degenerate("pseudo-label mask keeps no pixel".into()));
    }
    let n = kept as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; shape.len()];
    for q in (0..hw).filter(|&q| keep[q]) {
        let i = labels[q] as usize * hw + q;
        value -= clamp_log(p.data()[i]);
        grad[i] = -1.0 / (n * p.data()[i].max(PROB_EPS));
    }
    Ok(Objective { value: value / n, grad })
}
