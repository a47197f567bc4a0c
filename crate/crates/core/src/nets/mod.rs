//! The four networks: semantic stream, gated edge stream and the two
//! patch discriminators.
//!
//! Networks own their weights in a [`ParamSet`] and build their forward pass
//! into a caller-supplied [`Graph`]. Passing `trainable = false` binds the
//! weights as constants: gradients still flow through the network to its
//! inputs, but no weight gradient is produced.

mod disc;
mod edge;
mod semantic;

pub use disc::{DiscKind, Discriminator};
pub use edge::{EdgeNet, EdgeOutput, GateOverride, GatedConv, GatedOutput};
pub use semantic::{Backbone, SemanticFeatures, SemanticNet, SemanticOutput};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::graph::{Gradients, Graph, ParamKey, Var};
use crate::rng::{self, Rng};
use crate::{Error, Result, Tensor};

pub mod owner {
    pub const SEMANTIC: u32 = 0;
    pub const EDGE: u32 = 1;
    pub const DISC_SEM: u32 = 2;
    pub const DISC_EDGE: u32 = 3;
}

/// What the edge stream feeds back into the semantic classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Fusion {
    /// The single-channel boundary map.
    #[default]
    Boundary,
    /// The last edge-stream feature map.
    Features,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetConfig {
    pub num_classes: usize,
    /// Input `(height, width)`; both must be divisible by the total stride.
    pub resolution: (usize, usize),
    /// Channels of the full-resolution first convolution.
    pub stem_width: usize,
    /// One stride-2 stage per entry.
    pub encoder_widths: Vec<usize>,
    /// One upsampling stage per encoder stage, deepest first.
    pub decoder_widths: Vec<usize>,
    pub edge_width: usize,
    /// Residual + gated-convolution blocks; each taps one encoder stage.
    pub edge_blocks: usize,
    pub disc_sem_widths: Vec<usize>,
    pub disc_edge_widths: Vec<usize>,
    pub leaky_slope: f32,
    pub fusion: Fusion,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            num_classes: 5,
            resolution: (64, 64),
            stem_width: 8,
            encoder_widths: alloc::vec![16, 32, 64, 64],
            decoder_widths: alloc::vec![48, 32, 16, 8],
            edge_width: 8,
            edge_blocks: 3,
            disc_sem_widths: alloc::vec![16, 32, 64, 128],
            disc_edge_widths: alloc::vec![16, 32, 64],
            leaky_slope: 0.2,
            fusion: Fusion::Boundary,
        }
    }
}

impl NetConfig {
    pub fn total_stride(&self) -> usize {
        1 << self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        let widths = [&self.encoder_widths, &self.decoder_widths, &self.disc_sem_widths, &self.disc_edge_widths];
        if self.stem_width == 0 || self.edge_width == 0 || widths.iter().any(|ws| ws.is_empty() || ws.contains(&0)) {
            return bad("all widths must be positive and non-empty".to_string());
        }
        if self.decoder_widths.len() != self.encoder_widths.len() {
            return bad(format!(
                "{} decoder stages for {} encoder stages",
                self.decoder_widths.len(),
                self.encoder_widths.len()
            ));
        }
        if self.edge_blocks == 0 || self.edge_blocks > self.encoder_widths.len() {
            return bad(format!(
                "edge stream has {} blocks but the encoder offers {} gating taps",
                self.edge_blocks,
                self.encoder_widths.len()
            ));
        }
        let s = self.total_stride();
        let (h, w) = self.resolution;
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return bad(format!("resolution {h}x{w} is not divisible by the total stride {s}"));
        }
        let ds = 1 << self.disc_sem_widths.len();
        let de = 1 << self.disc_edge_widths.len();
        if h % ds != 0 || w % ds != 0 || h % de != 0 || w % de != 0 {
            return bad(format!("resolution {h}x{w} does not survive the discriminator strides"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    /// Channels the classifier receives from the edge stream.
    pub fn fusion_channels(&self) -> usize {
        match self.fusion {
            Fusion::Boundary => 1,
            Fusion::Features => self.edge_width,
        }
    }
}

/// Named weight tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    owner: u32,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(owner: u32) -> Self {
        ParamSet { owner, names: Vec::new(), tensors: Vec::new() }
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn key(&self, i: usize) -> ParamKey {
        ParamKey { owner: self.owner, index: i as u32 }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor with the graph, as trainable parameters or as
    /// constants.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if trainable { g.param(self.key(i), t) } else { g.frozen_param(t) })
            .collect()
    }

    /// Gradients for every tensor, zero where the graph produced none.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| grads.param(self.key(i)).cloned().unwrap_or_else(|| Tensor::zeros(t.dims())))
            .collect()
    }

    /// Replaces the weights, checking names and shapes.
    pub fn load(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::InvalidConfig(format!("expected {} tensors, got {}", self.tensors.len(), named.len())));
        }
        for (i, (name, t)) in named.iter().enumerate() {
            if *name != self.names[i] || t.dims() != self.tensors[i].dims() {
                return Err(Error::InvalidConfig(format!(
                    "tensor {i}: expected {} {:?}, got {} {:?}",
                    self.names[i],
                    self.tensors[i].dims(),
                    name,
                    t.dims()
                )));
            }
        }
        for (slot, (_, t)) in self.tensors.iter_mut().zip(named) {
            *slot = t;
        }
        Ok(())
    }
}

/// A convolution layer: weight and bias indices into a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        // He-uniform for the rectifier nonlinearities used throughout
        let fan_in = (ci * k * k) as f64;
        let bound = libm::sqrt(6.0 / fan_in);
        let data = (0..co * ci * k * k).map(|_| rng::range(rng, -bound, bound) as f32).collect();
        let w = ps.add(&format!("{name}.weight"), Tensor::from_vec(&[co, ci, k, k], data).unwrap());
        let b = ps.add(&format!("{name}.bias"), Tensor::zeros(&[co]));
        Conv { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph<'_>, p: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }

    pub fn weight_index(&self) -> usize {
        self.w
    }

    pub fn bias_index(&self) -> usize {
        self.b
    }
}
