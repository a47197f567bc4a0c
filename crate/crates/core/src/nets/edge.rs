use alloc::format;
use alloc::vec::Vec;

use super::{owner, Conv, NetConfig, ParamSet};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::{Error, Result, Tensor};

/// Forces every gate of the edge stream to a constant (for probing).
pub type GateOverride = Option<f32>;

/// Gated convolution: a spatial attention map computed from the edge
/// features and a semantic tap suppresses non-edge activations before a
/// 1×1 convolution.
#[derive(Debug, Clone, Copy)]
pub struct GatedConv {
    gate: Conv,
    out: Conv,
}

#[derive(Debug, Clone, Copy)]
pub struct GatedOutput {
    pub out: Var,
    /// Attention map `α ∈ [0, 1]`, single channel.
    pub alpha: Var,
}

impl GatedConv {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize, tap_width: usize, rng: &mut Rng) -> Self {
        GatedConv {
            gate: Conv::new(ps, &format!("{name}.gate"), width + tap_width, 1, 1, 1, 0, rng),
            out: Conv::new(ps, &format!("{name}.out"), width, width, 1, 1, 0, rng),
        }
    }

    /// `conv(edge_feat ⊙ σ(conv₁ₓ₁(norm([edge_feat, gate_src]))))`. The gate
    /// source must already be resampled to the edge resolution.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        edge_feat: Var,
        gate_src: Var,
        force: GateOverride,
    ) -> Result<GatedOutput> {
        let (_, h, w) = g.value(edge_feat).chw();
        let (_, gh, gw) = g.value(gate_src).chw();
        if (gh, gw) != (h, w) {
            return Err(Error::shape("gated_conv", format!("gate source {gh}x{gw} against edge features {h}x{w}")));
        }
        let alpha = match force {
            Some(v) => g.input(Tensor::full(&[1, h, w], v)),
            None => {
                let cat = g.concat(&[edge_feat, gate_src])?;
                let normed = g.instance_norm(cat);
                let logits = self.gate.forward(g, p, normed)?;
                g.sigmoid(logits)
            }
        };
        let gated = g.mul_map(edge_feat, alpha)?;
        let out = self.out.forward(g, p, gated)?;
        Ok(GatedOutput { out, alpha })
    }
}

#[derive(Debug, Clone)]
pub struct EdgeOutput {
    /// Boundary probabilities, `[1, H, W]`.
    pub boundary: Var,
    /// Last-layer edge features fed to the edge discriminator.
    pub edge_feat: Var,
    pub alphas: Vec<Var>,
}

/// Edge stream: residual blocks on the first semantic convolution, each
/// followed by a gated convolution tapping one encoder stage.
#[derive(Debug, Clone)]
pub struct EdgeNet {
    params: ParamSet,
    entry: Conv,
    blocks: Vec<(Conv, Conv, GatedConv)>,
    head: Conv,
    width: usize,
}

impl EdgeNet {
    pub fn new(config: &NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new(owner::EDGE);
        let w = config.edge_width;
        let entry = Conv::new(&mut ps, "entry", config.stem_width, w, 1, 1, 0, rng);
        let blocks = (0..config.edge_blocks)
            .map(|i| {
                let a = Conv::new(&mut ps, &format!("res{i}.conv1"), w, w, 3, 1, 1, rng);
                let b = Conv::new(&mut ps, &format!("res{i}.conv2"), w, w, 3, 1, 1, rng);
                let gc = GatedConv::new(&mut ps, &format!("gate{i}"), w, config.encoder_widths[i], rng);
                (a, b, gc)
            })
            .collect();
        let head = Conv::new(&mut ps, "head", w, 1, 1, 1, 0, rng);
        Ok(EdgeNet { params: ps, entry, blocks, head, width: w })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn gated_conv(&self, i: usize) -> &GatedConv {
        &self.blocks[i].2
    }

    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        first_conv: Var,
        gating_feats: &[Var],
        trainable: bool,
        force: GateOverride,
    ) -> Result<EdgeOutput> {
        let p = self.params.bind(g, trainable);
        self.forward_with(g, &p, first_conv, gating_feats, force)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        first_conv: Var,
        gating_feats: &[Var],
        force: GateOverride,
    ) -> Result<EdgeOutput> {
        if gating_feats.len() < self.blocks.len() {
            return Err(Error::shape(
                "edge_forward",
                format!("{} gating maps for {} gated layers", gating_feats.len(), self.blocks.len()),
            ));
        }
        let (_, h, w) = g.value(first_conv).chw();
        let mut x = self.entry.forward(g, p, first_conv)?;
        let mut alphas = Vec::with_capacity(self.blocks.len());
        for (i, (a, b, gc)) in self.blocks.iter().enumerate() {
            let y = a.forward(g, p, x)?;
            let y = g.relu(y);
            let y = b.forward(g, p, y)?;
            let y = g.add(x, y)?;
            let y = g.relu(y);
            let tap = g.resize(gating_feats[i], h, w);
            let out = gc.forward(g, p, y, tap, force)?;
            alphas.push(out.alpha);
            x = out.out;
        }
        let logits = self.head.forward(g, p, x)?;
        let boundary = g.sigmoid(logits);
        Ok(EdgeOutput { boundary, edge_feat: x, alphas })
    }
}
