//! Training objectives and the maps they are computed from.
//!
//! Everything here works in `f64` on channel-major `[C, H, W]` buffers and
//! is a pure function of its arguments (the Gumbel sampler takes an explicit
//! stream). Each differentiable objective returns its value together with
//! the analytic gradient with respect to its differentiable input, so the
//! trainer can splice it into a [`crate::graph::Graph`] and the tests can
//! check it against finite differences.
//!
//! Pixel *means* are used wherever a sum over pixels would appear, which
//! keeps the loss weights independent of resolution. In particular the
//! image-level entropy `ε` is the mean of the normalised entropy map and lies
//! in `[0, 1]`.

mod adversarial;
mod boundary;
mod information;
mod maps;
mod segmentation;
mod total;

pub use adversarial::{adv_edge, adv_sem, AdvMode, AdvObjective};
pub use boundary::{
    edge_bce, edge_consistency, gaussian_kernel, gumbel_noise, pred_to_boundary, BoundaryDerivation, EdgeConsistency,
    NPlus,
};
pub use information::{entropy, entropy_vjp, self_information, self_information_vjp};
pub use maps::{labels_to_onehot, BoundaryMap, EntropyMap, ProbMap, SelfInfoMap, Shape3};
pub use segmentation::{cross_entropy_seg, lovasz_softmax, masked_cross_entropy, softmax_prob, uasl};
pub use total::{total_loss, LossComponents, LossWeights, TermMask};

use alloc::vec::Vec;

/// Lower clamp applied to every probability before a logarithm.
pub const PROB_EPS: f64 = 1e-12;

/// A scalar objective and its gradient with respect to the differentiated
/// input, laid out like that input.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[inline]
pub(crate) fn clamp_log(p: f64) -> f64 {
    libm::log(p.max(PROB_EPS))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
