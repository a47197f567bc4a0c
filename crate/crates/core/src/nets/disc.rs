use alloc::format;
use alloc::vec::Vec;

use super::{owner, Conv, NetConfig, ParamSet};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscKind {
    /// Judges self-information maps (`C` channels).
    Semantic,
    /// Judges last-layer edge features.
    Edge,
}

/// Fully convolutional patch discriminator producing raw (pre-sigmoid)
/// scores.
///
/// The semantic variant is four 4×4 stride-2 convolutions followed by a
/// 3×3 classifier that keeps the spatial size; the edge variant is three
/// 4×4 stride-2 convolutions and a 1×1 classifier. Leaky ReLU follows every
/// layer except the classifier.
#[derive(Debug, Clone)]
pub struct Discriminator {
    kind: DiscKind,
    params: ParamSet,
    layers: Vec<Conv>,
    classifier: Conv,
    in_channels: usize,
    slope: f32,
}

impl Discriminator {
    pub fn new(config: &NetConfig, kind: DiscKind, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (own, widths, in_channels) = match kind {
            DiscKind::Semantic => (owner::DISC_SEM, &config.disc_sem_widths, config.num_classes),
            DiscKind::Edge => (owner::DISC_EDGE, &config.disc_edge_widths, config.edge_width),
        };
        let mut ps = ParamSet::new(own);
        let mut prev = in_channels;
        let mut layers = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Conv::new(&mut ps, &format!("conv{i}"), prev, w, 4, 2, 1, rng));
            prev = w;
        }
        let classifier = match kind {
            DiscKind::Semantic => Conv::new(&mut ps, "classifier", prev, 1, 3, 1, 1, rng),
            DiscKind::Edge => Conv::new(&mut ps, "classifier", prev, 1, 1, 1, 0, rng),
        };
        Ok(Discriminator { kind, params: ps, layers, classifier, in_channels, slope: config.leaky_slope })
    }

    pub fn kind(&self) -> DiscKind {
        self.kind
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Spatial downsampling factor from input to score map.
    pub fn stride(&self) -> usize {
        1 << self.layers.len()
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, x: Var, trainable: bool) -> Result<Var> {
        let (c, _, _) = g.value(x).chw();
        if c != self.in_channels {
            return Err(Error::shape(
                "discriminate",
                format!("{:?} discriminator expects {} channels, got {c}", self.kind, self.in_channels),
            ));
        }
        let p = self.params.bind(g, trainable);
        let mut x = x;
        for layer in &self.layers {
            let y = layer.forward(g, &p, x)?;
            x = g.leaky_relu(y, self.slope);
        }
        self.classifier.forward(g, &p, x)
    }
}
