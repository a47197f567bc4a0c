use alloc::format;
use alloc::vec::Vec;

use super::{owner, Conv, NetConfig, ParamSet};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::{Error, Result, Tensor};

/// Intermediate maps of the semantic stream that other components consume.
#[derive(Debug, Clone)]
pub struct SemanticFeatures {
    /// Output of the first convolution, at input resolution.
    pub first_conv: Var,
    /// Output of every encoder stage, shallowest first.
    pub stage_feats: Vec<Var>,
    /// Deepest encoder map.
    pub bottleneck: Var,
    /// Last decoder map, at input resolution.
    pub decoder_feat: Var,
}

#[derive(Debug, Clone)]
pub struct SemanticOutput {
    pub logits: Var,
    pub features: SemanticFeatures,
}

/// Anything that can stand in for the encoder–decoder of the semantic
/// stream.
pub trait Backbone {
    fn features<'p>(&'p self, g: &mut Graph<'p>, image: Var, trainable: bool) -> Result<SemanticFeatures>;
}

/// Encoder–decoder segmentation network with a fusion classifier.
#[derive(Debug, Clone)]
pub struct SemanticNet {
    config: NetConfig,
    params: ParamSet,
    stem: Conv,
    down: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    head: Conv,
}

impl SemanticNet {
    pub fn new(config: &NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new(owner::SEMANTIC);
        let stem = Conv::new(&mut ps, "stem", 3, config.stem_width, 3, 1, 1, rng);
        let mut down = Vec::new();
        let mut prev = config.stem_width;
        for (i, &w) in config.encoder_widths.iter().enumerate() {
            let a = Conv::new(&mut ps, &format!("enc{i}.down"), prev, w, 3, 2, 1, rng);
            let b = Conv::new(&mut ps, &format!("enc{i}.conv"), w, w, 3, 1, 1, rng);
            down.push((a, b));
            prev = w;
        }
        let n = config.encoder_widths.len();
        let mut up = Vec::new();
        for (i, &w) in config.decoder_widths.iter().enumerate() {
            // skip connection from the next-shallower stage, or the stem
            let skip = if i + 1 < n { config.encoder_widths[n - 2 - i] } else { config.stem_width };
            up.push(Conv::new(&mut ps, &format!("dec{i}"), prev + skip, w, 3, 1, 1, rng));
            prev = w;
        }
        let head = Conv::new(&mut ps, "head", prev + config.fusion_channels(), config.num_classes, 1, 1, 0, rng);
        Ok(SemanticNet { config: config.clone(), params: ps, stem, down, up, head })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Checks a CHW image against the configured resolution.
    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = image.chw();
        if c != 3 || (h, w) != self.config.resolution {
            return Err(Error::shape(
                "semantic_forward",
                format!(
                    "image {c}x{h}x{w}, network expects 3x{}x{}",
                    self.config.resolution.0, self.config.resolution.1
                ),
            ));
        }
        Ok(())
    }

    /// Final classifier over the decoder map concatenated with the edge
    /// input (a boundary map or edge features, per [`NetConfig::fusion`]).
    /// Without an edge input a zero map is fused.
    pub fn head<'p>(&'p self, g: &mut Graph<'p>, p: &[Var], decoder_feat: Var, edge_input: Option<Var>) -> Result<Var> {
        let (_, h, w) = g.value(decoder_feat).chw();
        let fc = self.config.fusion_channels();
        let edge = match edge_input {
            Some(e) => {
                let (ec, _, _) = g.value(e).chw();
                if ec != fc {
                    return Err(Error::shape("fuse_edge", format!("edge input has {ec} channels, head expects {fc}")));
                }
                g.resize(e, h, w)
            }
            None => g.input(Tensor::zeros(&[fc, h, w])),
        };
        let x = g.concat(&[decoder_feat, edge])?;
        self.head.forward(g, p, x)
    }

    /// Encoder–decoder features and the fusion head, with a caller-bound
    /// parameter list (see [`ParamSet::bind`]).
    pub fn features_with<'p>(&'p self, g: &mut Graph<'p>, p: &[Var], image: Var) -> Result<SemanticFeatures> {
        let (_, h, w) = g.value(image).chw();
        if (h, w) != self.config.resolution {
            return Err(Error::shape(
                "semantic_forward",
                format!("image {h}x{w} against configured {:?}", self.config.resolution),
            ));
        }
        let x = self.stem.forward(g, p, image)?;
        let first_conv = g.relu(x);
        let mut stage_feats = Vec::with_capacity(self.down.len());
        let mut x = first_conv;
        for (a, b) in &self.down {
            let y = a.forward(g, p, x)?;
            let y = g.relu(y);
            let y = b.forward(g, p, y)?;
            x = g.relu(y);
            stage_feats.push(x);
        }
        let bottleneck = x;
        let n = stage_feats.len();
        for (i, conv) in self.up.iter().enumerate() {
            let skip = if i + 1 < n { stage_feats[n - 2 - i] } else { first_conv };
            let (_, sh, sw) = g.value(skip).chw();
            let up = g.resize(x, sh, sw);
            let cat = g.concat(&[up, skip])?;
            let y = conv.forward(g, p, cat)?;
            x = g.relu(y);
        }
        Ok(SemanticFeatures { first_conv, stage_feats, bottleneck, decoder_feat: x })
    }

    /// Full forward pass with an empty edge input.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, image: Var, trainable: bool) -> Result<SemanticOutput> {
        let p = self.params.bind(g, trainable);
        let features = self.features_with(g, &p, image)?;
        let logits = self.head(g, &p, features.decoder_feat, None)?;
        Ok(SemanticOutput { logits, features })
    }
}

impl Backbone for SemanticNet {
    fn features<'p>(&'p self, g: &mut Graph<'p>, image: Var, trainable: bool) -> Result<SemanticFeatures> {
        let p = self.params.bind(g, trainable);
        self.features_with(g, &p, image)
    }
}
