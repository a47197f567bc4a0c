use alloc::format;
use alloc::vec::Vec;

use super::{sigmoid, softplus};
use crate::{Error, Result};

/// Which player of the adversarial game the loss is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AdvMode {
    /// Discriminator update: source maps labelled 0, target maps labelled 1.
    Disc,
    /// Generator update: target maps pushed toward the source label.
    Gen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvObjective {
    pub value: f64,
    /// Target-term weight `1 + (α ε)²` that was applied.
    pub weight: f64,
    pub grad_src: Vec<f64>,
    pub grad_tgt: Vec<f64>,
}

/// Entropy-reweighted adversarial loss on raw discriminator scores.
///
/// `entropy_t` is the image-level target entropy; it only scales the loss
/// and never receives a gradient.
pub fn adv_sem(src: &[f64], tgt: &[f64], entropy_t: f64, alpha: f64, mode: AdvMode) -> Result<AdvObjective> {
    if !(alpha >= 0.0) {
        return Err(Error::arg("adv_sem", format!("alpha must be non-negative, got {alpha}")));
    }
    if !entropy_t.is_finite() {
        return Err(Error::NonFinite("adv_sem entropy weight"));
    }
    let weight = 1.0 + (alpha * entropy_t) * (alpha * entropy_t);
    weighted(src, tgt, weight, mode)
}

/// Unweighted adversarial loss on edge-feature discriminator scores.
pub fn adv_edge(src: &[f64], tgt: &[f64], mode: AdvMode) -> Result<AdvObjective> {
    weighted(src, tgt, 1.0, mode)
}

fn weighted(src: &[f64], tgt: &[f64], weight: f64, mode: AdvMode) -> Result<AdvObjective> {
    if tgt.is_empty() || (mode == AdvMode::Disc && src.is_empty()) {
        return Err(Error::shape("adversarial loss", "empty score map"));
    }
    if src.iter().chain(tgt).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("adversarial scores"));
    }
    let nt = tgt.len() as f64;
    let ns = src.len() as f64;
    match mode {
        AdvMode::Disc => {
            // -ln(1 - σ(s)) = softplus(s); -ln σ(s) = softplus(-s)
            let src_term: f64 = src.iter().map(|&s| softplus(s)).sum::<f64>() / ns;
            let tgt_term: f64 = tgt.iter().map(|&s| softplus(-s)).sum::<f64>() / nt;
            Ok(AdvObjective {
                value: src_term + weight * tgt_term,
                weight,
                grad_src: src.iter().map(|&s| sigmoid(s) / ns).collect(),
                grad_tgt: tgt.iter().map(|&s| -weight * sigmoid(-s) / nt).collect(),
            })
        }
        AdvMode::Gen => {
            let tgt_term: f64 = tgt.iter().map(|&s| softplus(s)).sum::<f64>() / nt;
            Ok(AdvObjective {
                value: weight * tgt_term,
                weight,
                grad_src: alloc::vec![0.0; src.len()],
                grad_tgt: tgt.iter().map(|&s| weight * sigmoid(s) / nt).collect(),
            })
        }
    }
}
