use super::boundary::NPlus;
use crate::{Error, Result};

/// Trade-off weights and the free parameters of the boundary objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    /// λ₁, semantic adversarial term.
    pub lambda_sem_adv: f64,
    /// λ₂, edge-stream boundary supervision.
    pub lambda_edge_seg: f64,
    /// λ₃, edge adversarial term.
    pub lambda_edge_adv: f64,
    /// α of the entropy weight `1 + (α ε)²`.
    pub alpha: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Threshold defining boundary pixels in the consistency loss.
    pub theta: f64,
    /// Gaussian σ applied before differentiating the class maps.
    pub sigma_f: f64,
    pub nplus: NPlus,
    /// Positive-class balancing of the boundary BCE.
    pub balance_edge_bce: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sem_adv: 1e-3,
            lambda_edge_seg: 20.0,
            lambda_edge_adv: 1e-3,
            alpha: 10.0,
            tau: 1.0,
            theta: 0.5,
            sigma_f: 1.0,
            nplus: NPlus::Union,
            balance_edge_bce: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda_sem_adv, self.lambda_edge_seg, self.lambda_edge_adv, self.alpha];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::arg("LossWeights", "λ and α must be finite and non-negative"));
        }
        if !(self.tau > 0.0) || !(self.sigma_f > 0.0) {
            return Err(Error::arg("LossWeights", "τ and σ_F must be positive"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::arg("LossWeights", "θ must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Unweighted values of every objective term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossComponents {
    pub sem_seg: f64,
    pub lovasz: f64,
    pub sem_adv: f64,
    pub edge_seg: f64,
    pub edge_adv: f64,
    pub edge_con: f64,
    pub uasl: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("sem_seg", self.sem_seg),
            ("lovasz", self.lovasz),
            ("sem_adv", self.sem_adv),
            ("edge_seg", self.edge_seg),
            ("edge_adv", self.edge_adv),
            ("edge_con", self.edge_con),
            ("uasl", self.uasl),
        ]
    }
}

/// Which terms take part in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TermMask {
    pub lovasz: bool,
    pub sem_adv: bool,
    pub edge_seg: bool,
    pub edge_adv: bool,
    pub edge_con: bool,
    pub uasl: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        TermMask::joint()
    }
}

impl TermMask {
    /// Joint adversarial training with every edge term.
    pub const fn joint() -> Self {
        TermMask { lovasz: true, sem_adv: true, edge_seg: true, edge_adv: true, edge_con: true, uasl: false }
    }

    /// Supervised source training only.
    pub const fn source_only() -> Self {
        TermMask { lovasz: true, sem_adv: false, edge_seg: false, edge_adv: false, edge_con: false, uasl: false }
    }

    /// Self-training on pseudo-labels.
    pub const fn self_training() -> Self {
        TermMask { lovasz: true, sem_adv: false, edge_seg: false, edge_adv: false, edge_con: false, uasl: true }
    }

    pub fn uses_edge_stream(&self) -> bool {
        self.edge_seg || self.edge_adv || self.edge_con
    }

    pub fn uses_target(&self) -> bool {
        self.sem_adv || self.edge_adv || self.edge_con || self.uasl
    }
}

/// Weighted total `L_seg + L_lovász + λ₁L_adv + λ₂L_eseg + λ₃L_eadv + L_con + L_uasl`
/// over the active terms.
pub fn total_loss(c: &LossComponents, w: &LossWeights, mask: &TermMask) -> Result<f64> {
    let terms = [
        ("sem_seg", true, 1.0, c.sem_seg),
        ("lovasz", mask.lovasz, 1.0, c.lovasz),
        ("sem_adv", mask.sem_adv, w.lambda_sem_adv, c.sem_adv),
        ("edge_seg", mask.edge_seg, w.lambda_edge_seg, c.edge_seg),
        ("edge_adv", mask.edge_adv, w.lambda_edge_adv, c.edge_adv),
        ("edge_con", mask.edge_con, 1.0, c.edge_con),
        ("uasl", mask.uasl, 1.0, c.uasl),
    ];
    let mut total = 0.0;
    for (name, active, weight, value) in terms {
        if !active {
            continue;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        total += weight * value;
    }
    Ok(total)
}
