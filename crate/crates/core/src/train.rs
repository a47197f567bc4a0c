//! The staged training procedure on in-memory data.
//!
//! Stage 1 alternates a generator update of the semantic and edge streams
//! (discriminators frozen) with one update of each discriminator on the
//! detached generator outputs. Stage 3 fine-tunes the semantic stream alone
//! on stored pseudo-labels. Every gradient of a step is computed before any
//! weight changes, so a failing step leaves the model untouched.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{Gradients, Graph, Var};
use crate::losses::{self, AdvMode, BoundaryMap, EntropyMap, LossComponents, LossWeights, ProbMap, Shape3, TermMask};
use crate::nets::{DiscKind, Discriminator, EdgeNet, Fusion, NetConfig, SemanticNet};
use crate::optim::{poly_lr, Adam, AdamConfig, Sgd, SgdConfig};
use crate::rng::{self, streams};
use crate::{Error, Result, Tensor};

/// The four networks.
#[derive(Debug, Clone)]
pub struct Model {
    pub semantic: SemanticNet,
    pub edge: EdgeNet,
    pub disc_sem: Discriminator,
    pub disc_edge: Discriminator,
}

impl Model {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        Ok(Model {
            semantic: SemanticNet::new(config, &mut rng::stream(seed, streams::INIT_SEMANTIC))?,
            edge: EdgeNet::new(config, &mut rng::stream(seed, streams::INIT_EDGE))?,
            disc_sem: Discriminator::new(config, DiscKind::Semantic, &mut rng::stream(seed, streams::INIT_DISC_SEM))?,
            disc_edge: Discriminator::new(config, DiscKind::Edge, &mut rng::stream(seed, streams::INIT_DISC_EDGE))?,
        })
    }

    pub fn config(&self) -> &NetConfig {
        self.semantic.config()
    }

    /// Inference pass. With `use_edge` the edge stream feeds the classifier;
    /// without it a zero map is fused, as during source-only training.
    pub fn predict(&self, image: &Tensor, use_edge: bool) -> Result<Prediction> {
        self.semantic.check_image(image)?;
        let mut g = Graph::new();
        let x = g.input_ref(image);
        let ps = self.semantic.params().bind(&mut g, false);
        let pe = if use_edge { Some(self.edge.params().bind(&mut g, false)) } else { None };
        let f = forward(self, &mut g, &ps, pe.as_deref(), x)?;
        let cfg = self.config();
        let (h, w) = cfg.resolution;
        let shape = Shape3::new(cfg.num_classes, h, w);
        let probs = to_prob(g.value(f.prob), shape)?;
        let entropy = losses::entropy(&probs);
        let pool = |t: &Tensor| t.channel_means().iter().map(|v| *v as f64).collect::<Vec<f64>>();
        Ok(Prediction {
            labels: probs.argmax(),
            entropy,
            boundary: f.boundary.map(|b| BoundaryMap::from_tensor(g.value(b))).transpose()?,
            semantic_pooled: pool(g.value(f.bottleneck)),
            edge_pooled: f.edge_feat.map(|e| pool(g.value(e))),
            probs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: ProbMap,
    pub labels: Vec<u8>,
    pub entropy: EntropyMap,
    pub boundary: Option<BoundaryMap>,
    /// Spatial mean of the semantic bottleneck.
    pub semantic_pooled: Vec<f64>,
    /// Spatial mean of the last edge features.
    pub edge_pooled: Option<Vec<f64>>,
}

impl Prediction {
    /// Largest class probability per pixel.
    pub fn confidence(&self) -> Vec<f64> {
        let s = self.probs.shape();
        let hw = s.pixels();
        (0..hw).map(|q| (0..s.c).map(|c| self.probs.data()[c * hw + q]).fold(0.0, f64::max)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Terms of the stage-1 objective.
    pub terms: TermMask,
    pub stage1_iters: usize,
    pub stage3_iters: usize,
    /// Source and target images per iteration.
    pub batch_size: usize,
    pub generator: SgdConfig,
    pub discriminator: AdamConfig,
    pub lr_power: f64,
    /// Keep the source supervised term during stage 3.
    pub keep_source: bool,
    /// Chebyshev radius of the boundary ground truth.
    pub boundary_thickness: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            terms: TermMask::joint(),
            stage1_iters: 2000,
            stage3_iters: 1000,
            batch_size: 1,
            generator: SgdConfig::default(),
            discriminator: AdamConfig::default(),
            lr_power: 0.9,
            keep_source: true,
            boundary_thickness: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.stage1_iters == 0 || self.stage3_iters == 0 || self.batch_size == 0 {
            return bad("iteration counts and batch size must be positive");
        }
        if !(self.generator.lr > 0.0) || !(self.discriminator.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_power >= 0.0) || self.boundary_thickness == 0 {
            return bad("lr_power must be non-negative and boundary_thickness at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SourceSample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: Vec<u8>,
    /// Binary boundary ground truth derived from `label`.
    pub boundary: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub source: Vec<SourceSample>,
    /// Unlabelled target images.
    pub target: Vec<Tensor>,
}

/// Per-image supervision for stage 3.
#[derive(Debug, Clone, PartialEq)]
pub enum PseudoTarget {
    /// Every pixel, cross-entropy weighted by `(1 − E)²`.
    Uasl { labels: Vec<u8>, entropy: Vec<f64> },
    /// Unweighted cross-entropy on the kept pixels only.
    Thresholded { labels: Vec<u8>, keep: Vec<bool> },
}

impl PseudoTarget {
    pub fn uasl(p: &Prediction) -> Self {
        PseudoTarget::Uasl { labels: p.labels.clone(), entropy: p.entropy.data().to_vec() }
    }

    /// Keeps pixels whose top class probability exceeds `threshold`.
    pub fn thresholded(p: &Prediction, threshold: f64) -> Self {
        let keep = p.confidence().iter().map(|c| *c > threshold).collect();
        PseudoTarget::Thresholded { labels: p.labels.clone(), keep }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Stage {
    Joint = 1,
    SelfTraining = 3,
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLog {
    pub iter: usize,
    pub components: LossComponents,
    pub total: f64,
    pub disc_sem: f64,
    pub disc_edge: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Batch mean of the per-image target entropy.
    pub entropy_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerState {
    pub semantic: Sgd,
    pub edge: Sgd,
    pub disc_sem: Adam,
    pub disc_edge: Adam,
}

impl OptimizerState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        OptimizerState {
            semantic: Sgd::new(cfg.generator, model.semantic.params().tensors()),
            edge: Sgd::new(cfg.generator, model.edge.params().tensors()),
            disc_sem: Adam::new(cfg.discriminator, model.disc_sem.params().tensors()),
            disc_edge: Adam::new(cfg.discriminator, model.disc_edge.params().tensors()),
        }
    }
}

/// Gradients of one full iteration, before any update.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub semantic: Vec<Tensor>,
    pub edge: Option<Vec<Tensor>>,
    /// Discriminator-phase gradients, exactly as produced by their graphs.
    pub disc_sem: Option<Gradients>,
    pub disc_edge: Option<Gradients>,
    pub log: StepLog,
}

/// Owns the model, the optimizers and the iteration counter of one stage.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optim: OptimizerState,
    pub stage: Stage,
    /// Completed iterations of the current stage.
    pub iter: usize,
}

struct Fwd {
    logits: Var,
    prob: Var,
    bottleneck: Var,
    boundary: Option<Var>,
    edge_feat: Option<Var>,
}

fn forward<'p>(model: &'p Model, g: &mut Graph<'p>, ps: &[Var], pe: Option<&[Var]>, image: Var) -> Result<Fwd> {
    let feats = model.semantic.features_with(g, ps, image)?;
    let (boundary, edge_feat, fused) = match pe {
        Some(pe) => {
            let out = model.edge.forward_with(g, pe, feats.first_conv, &feats.stage_feats, None)?;
            let fused = match model.config().fusion {
                Fusion::Boundary => out.boundary,
                Fusion::Features => out.edge_feat,
            };
            (Some(out.boundary), Some(out.edge_feat), Some(fused))
        }
        None => (None, None, None),
    };
    let logits = model.semantic.head(g, ps, feats.decoder_feat, fused)?;
    let prob = g.softmax(logits);
    Ok(Fwd { logits, prob, bottleneck: feats.bottleneck, boundary, edge_feat })
}

fn to_prob(t: &Tensor, shape: Shape3) -> Result<ProbMap> {
    ProbMap::new(shape, t.data().iter().map(|v| *v as f64).collect())
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|v| *v as f64).collect()
}

/// Splices a scalar objective (already scaled by `k`) onto `var`.
fn attach(g: &mut Graph<'_>, var: Var, value: f64, grad: &[f64], k: f64) -> Result<Var> {
    let dims = g.value(var).dims().to_vec();
    let t = Tensor::from_vec(&dims, grad.iter().map(|v| (v * k) as f32).collect())?;
    g.loss(value * k, vec![(var, t)])
}

struct DiscCache {
    src: Vec<Tensor>,
    tgt: Vec<Tensor>,
    weights: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optim = OptimizerState::new(&model, &config);
        Ok(Trainer { model, config, optim, stage: Stage::Joint, iter: 0 })
    }

    /// Switches to stage 3 with fresh generator optimizer state.
    pub fn begin_self_training(&mut self) {
        self.stage = Stage::SelfTraining;
        self.iter = 0;
        self.optim.semantic = Sgd::new(self.config.generator, self.model.semantic.params().tensors());
    }

    pub fn stage_iters(&self) -> usize {
        match self.stage {
            Stage::Joint => self.config.stage1_iters,
            Stage::SelfTraining => self.config.stage3_iters,
        }
    }

    pub fn uses_edge(&self) -> bool {
        self.config.terms.uses_edge_stream()
    }

    pub fn lrs(&self) -> (f64, f64) {
        let n = self.stage_iters();
        let p = self.config.lr_power;
        (poly_lr(self.config.generator.lr, self.iter, n, p), poly_lr(self.config.discriminator.lr, self.iter, n, p))
    }

    /// Sample indices of iteration `iter`: reshuffled every epoch from a
    /// stream keyed by the seed, the stage and the epoch.
    pub fn batch_indices(&self, n: usize, domain: u64, iter: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let mut perm: Option<(usize, Vec<usize>)> = None;
        (0..b)
            .map(|slot| {
                let k = iter * b + slot;
                let epoch = k / n;
                if perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    let mut idx: Vec<usize> = (0..n).collect();
                    let id = (streams::DATA_ORDER << 40) | ((self.stage as u64) << 36) | (domain << 32) | epoch as u64;
                    rng::shuffle(&mut rng::stream(self.config.seed, id), &mut idx);
                    perm = Some((epoch, idx));
                }
                perm.as_ref().unwrap().1[k % n]
            })
            .collect()
    }

    fn check_data(&self, data: &TrainData, need_target: bool) -> Result<()> {
        if data.source.is_empty() || (need_target && data.target.is_empty()) {
            return Err(Error::InvalidConfig(
                "training needs source samples and, for adaptation, target images".into(),
            ));
        }
        Ok(())
    }

    /// Gradients of the next stage-1 iteration without touching any weight.
    pub fn stage1_grads(&self, data: &TrainData) -> Result<StepGrads> {
        let cfg = &self.config;
        let mask = cfg.terms;
        let w = &cfg.weights;
        self.check_data(data, mask.uses_target())?;
        let use_edge = mask.uses_edge_stream();
        let m = &self.model;
        let nc = m.config();
        let (h, wd) = nc.resolution;
        let shape = Shape3::new(nc.num_classes, h, wd);
        let b = cfg.batch_size;
        let kb = 1.0 / b as f64;

        let mut g = Graph::new();
        let ps = m.semantic.params().bind(&mut g, true);
        let pe = if use_edge { Some(m.edge.params().bind(&mut g, true)) } else { None };
        let mut terms: Vec<(Var, f32)> = Vec::new();
        let mut comp = LossComponents::default();
        let mut cache_sem = DiscCache { src: Vec::new(), tgt: Vec::new(), weights: Vec::new() };
        let mut cache_edge = DiscCache { src: Vec::new(), tgt: Vec::new(), weights: Vec::new() };

        for &i in &self.batch_indices(data.source.len(), 0, self.iter) {
            let s = &data.source[i];
            let x = g.input_ref(&s.image);
            let f = forward(m, &mut g, &ps, pe.as_deref(), x)?;
            let p = to_prob(g.value(f.prob), shape)?;
            let ce = losses::cross_entropy_seg(&p, &losses::labels_to_onehot(&s.label, shape.c)?)?;
            comp.sem_seg += ce.value * kb;
            terms.push((attach(&mut g, f.prob, ce.value, &ce.grad, kb)?, 1.0));
            if mask.lovasz {
                let lv = losses::lovasz_softmax(&p, &s.label)?;
                comp.lovasz += lv.value * kb;
                terms.push((attach(&mut g, f.prob, lv.value, &lv.grad, kb)?, 1.0));
            }
            if let (Some(bv), true) = (f.boundary, mask.edge_seg) {
                let bm = BoundaryMap::from_tensor(g.value(bv))?;
                let bce = losses::edge_bce(&bm, &s.boundary, w.balance_edge_bce)?;
                comp.edge_seg += bce.value * kb;
                terms.push((attach(&mut g, bv, bce.value, &bce.grad, kb * w.lambda_edge_seg)?, 1.0));
            }
            if mask.sem_adv {
                let info = g.self_information(f.prob);
                cache_sem.src.push(g.value(info).clone());
            }
            if let (Some(ef), true) = (f.edge_feat, mask.edge_adv) {
                cache_edge.src.push(g.value(ef).clone());
            }
        }

        let mut entropy_sum = 0.0;
        if mask.uses_target() {
            for (slot, &i) in self.batch_indices(data.target.len(), 1, self.iter).iter().enumerate() {
                let x = g.input_ref(&data.target[i]);
                let f = forward(m, &mut g, &ps, pe.as_deref(), x)?;
                let p = to_prob(g.value(f.prob), shape)?;
                let eps = losses::entropy(&p).mean();
                entropy_sum += eps;
                if mask.sem_adv {
                    let info = g.self_information(f.prob);
                    let scores = m.disc_sem.forward(&mut g, info, false)?;
                    let adv = losses::adv_sem(&[], &to_f64(g.value(scores)), eps, w.alpha, AdvMode::Gen)?;
                    comp.sem_adv += adv.value * kb;
                    terms.push((attach(&mut g, scores, adv.value, &adv.grad_tgt, kb * w.lambda_sem_adv)?, 1.0));
                    cache_sem.tgt.push(g.value(info).clone());
                    cache_sem.weights.push(eps);
                }
                if let (Some(ef), true) = (f.edge_feat, mask.edge_adv) {
                    let scores = m.disc_edge.forward(&mut g, ef, false)?;
                    let adv = losses::adv_edge(&[], &to_f64(g.value(scores)), AdvMode::Gen)?;
                    comp.edge_adv += adv.value * kb;
                    terms.push((attach(&mut g, scores, adv.value, &adv.grad_tgt, kb * w.lambda_edge_adv)?, 1.0));
                    cache_edge.tgt.push(g.value(ef).clone());
                }
                if let (Some(bv), true) = (f.boundary, mask.edge_con) {
                    let logits = to_f64(g.value(f.logits));
                    let id = (streams::GUMBEL << 40) | ((self.iter * b + slot) as u64);
                    let noise = losses::gumbel_noise(&mut rng::stream(cfg.seed, id), logits.len());
                    let deriv = losses::pred_to_boundary(&logits, shape, w.tau, w.sigma_f, &noise)?;
                    // the edge stream acts as the teacher here
                    let teacher = BoundaryMap::from_tensor(g.value(bv))?;
                    let con = losses::edge_consistency(deriv.map(), &teacher, w.theta, w.nplus)?;
                    comp.edge_con += con.value * kb;
                    let gl = deriv.backward(&con.grad_pred)?;
                    terms.push((attach(&mut g, f.logits, con.value, &gl, kb)?, 1.0));
                }
            }
        }

        let total = losses::total_loss(&comp, w, &mask)?;
        let root = g.weighted_sum(&terms)?;
        let grads = g.backward(root);
        let semantic = m.semantic.params().collect_grads(&grads);
        let edge = if use_edge { Some(m.edge.params().collect_grads(&grads)) } else { None };
        drop(g);

        let mut log = StepLog {
            iter: self.iter,
            components: comp,
            total,
            disc_sem: 0.0,
            disc_edge: 0.0,
            lr_gen: self.lrs().0,
            lr_disc: self.lrs().1,
            entropy_mean: if mask.uses_target() { entropy_sum * kb } else { 0.0 },
        };
        let disc_sem = if mask.sem_adv {
            let (v, gr) = self.disc_phase(&self.model.disc_sem, &cache_sem, Some(w.alpha))?;
            log.disc_sem = v;
            Some(gr)
        } else {
            None
        };
        let disc_edge = if mask.edge_adv && use_edge {
            let (v, gr) = self.disc_phase(&self.model.disc_edge, &cache_edge, None)?;
            log.disc_edge = v;
            Some(gr)
        } else {
            None
        };
        Ok(StepGrads { semantic, edge, disc_sem, disc_edge, log })
    }

    /// Discriminator loss on detached maps: source pairs labelled 0, target
    /// labelled 1, target term entropy-weighted when `alpha` is given.
    fn disc_phase(&self, d: &Discriminator, cache: &DiscCache, alpha: Option<f64>) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let n = cache.src.len().min(cache.tgt.len());
        let k = 1.0 / n as f64;
        let mut terms = Vec::with_capacity(n);
        let mut value = 0.0;
        for j in 0..n {
            let xs = g.input_ref(&cache.src[j]);
            let xt = g.input_ref(&cache.tgt[j]);
            let ss = d.forward(&mut g, xs, true)?;
            let st = d.forward(&mut g, xt, true)?;
            let (src, tgt) = (to_f64(g.value(ss)), to_f64(g.value(st)));
            let adv = match alpha {
                Some(a) => losses::adv_sem(&src, &tgt, cache.weights[j], a, AdvMode::Disc)?,
                None => losses::adv_edge(&src, &tgt, AdvMode::Disc)?,
            };
            value += adv.value * k;
            let ls = attach(&mut g, ss, adv.value, &adv.grad_src, k)?;
            let lt = attach(&mut g, st, 0.0, &adv.grad_tgt, k)?;
            terms.push((ls, 1.0));
            terms.push((lt, 1.0));
        }
        let root = g.weighted_sum(&terms)?;
        Ok((value, g.backward(root)))
    }

    /// Applies precomputed gradients and advances the iteration counter.
    pub fn apply(&mut self, grads: StepGrads) -> Result<StepLog> {
        let (lr_g, lr_d) = self.lrs();
        let all_finite = grads.semantic.iter().chain(grads.edge.iter().flatten()).all(Tensor::is_finite)
            && [&grads.disc_sem, &grads.disc_edge]
                .iter()
                .all(|d| d.as_ref().is_none_or(|d| d.params().all(|(_, t)| t.is_finite())));
        if !all_finite || !grads.log.total.is_finite() {
            return Err(Error::NonFinite("training step"));
        }
        let m = &mut self.model;
        self.optim.semantic.step(m.semantic.params_mut().tensors_mut(), &grads.semantic, lr_g)?;
        if let Some(ge) = &grads.edge {
            self.optim.edge.step(m.edge.params_mut().tensors_mut(), ge, lr_g)?;
        }
        if let Some(gd) = &grads.disc_sem {
            let gs = m.disc_sem.params().collect_grads(gd);
            self.optim.disc_sem.step(m.disc_sem.params_mut().tensors_mut(), &gs, lr_d)?;
        }
        if let Some(gd) = &grads.disc_edge {
            let gs = m.disc_edge.params().collect_grads(gd);
            self.optim.disc_edge.step(m.disc_edge.params_mut().tensors_mut(), &gs, lr_d)?;
        }
        self.iter += 1;
        Ok(grads.log)
    }

    pub fn stage1_step(&mut self, data: &TrainData) -> Result<StepLog> {
        if self.stage != Stage::Joint {
            return Err(Error::InvalidConfig("stage-1 step requested during stage 3".into()));
        }
        let grads = self.stage1_grads(data)?;
        self.apply(grads)
    }

    /// Gradients of the next stage-3 iteration. Only the semantic stream is
    /// trainable; the edge stream still feeds the classifier when stage 1
    /// used it.
    pub fn stage3_grads(&self, data: &TrainData, pseudo: &[PseudoTarget]) -> Result<StepGrads> {
        let cfg = &self.config;
        if data.target.len() != pseudo.len() || pseudo.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{} pseudo-labels for {} target images",
                pseudo.len(),
                data.target.len()
            )));
        }
        if cfg.keep_source {
            self.check_data(data, true)?;
        }
        let m = &self.model;
        let nc = m.config();
        let shape = Shape3::new(nc.num_classes, nc.resolution.0, nc.resolution.1);
        let kb = 1.0 / cfg.batch_size as f64;
        let mut g = Graph::new();
        let ps = m.semantic.params().bind(&mut g, true);
        let pe = if self.uses_edge() { Some(m.edge.params().bind(&mut g, false)) } else { None };
        let mut terms: Vec<(Var, f32)> = Vec::new();
        let mut comp = LossComponents::default();
        let mut mask = TermMask::self_training();
        mask.lovasz = cfg.terms.lovasz && cfg.keep_source;

        if cfg.keep_source {
            for &i in &self.batch_indices(data.source.len(), 0, self.iter) {
                let s = &data.source[i];
                let x = g.input_ref(&s.image);
                let f = forward(m, &mut g, &ps, pe.as_deref(), x)?;
                let p = to_prob(g.value(f.prob), shape)?;
                let ce = losses::cross_entropy_seg(&p, &losses::labels_to_onehot(&s.label, shape.c)?)?;
                comp.sem_seg += ce.value * kb;
                terms.push((attach(&mut g, f.prob, ce.value, &ce.grad, kb)?, 1.0));
                if mask.lovasz {
                    let lv = losses::lovasz_softmax(&p, &s.label)?;
                    comp.lovasz += lv.value * kb;
                    terms.push((attach(&mut g, f.prob, lv.value, &lv.grad, kb)?, 1.0));
                }
            }
        }
        let mut entropy_sum = 0.0;
        for &i in &self.batch_indices(data.target.len(), 1, self.iter) {
            let x = g.input_ref(&data.target[i]);
            let f = forward(m, &mut g, &ps, pe.as_deref(), x)?;
            let p = to_prob(g.value(f.prob), shape)?;
            entropy_sum += losses::entropy(&p).mean();
            let obj = match &pseudo[i] {
                PseudoTarget::Uasl { labels, entropy } => {
                    losses::uasl(&p, &losses::labels_to_onehot(labels, shape.c)?, entropy)?
                }
                // images without a confident pixel contribute nothing
                PseudoTarget::Thresholded { keep, .. } if !keep.contains(&true) => continue,
                PseudoTarget::Thresholded { labels, keep } => losses::masked_cross_entropy(&p, labels, keep)?,
            };
            comp.uasl += obj.value * kb;
            terms.push((attach(&mut g, f.prob, obj.value, &obj.grad, kb)?, 1.0));
        }
        let total = losses::total_loss(&comp, &cfg.weights, &mask)?;
        let root = g.weighted_sum(&terms)?;
        let grads = g.backward(root);
        let (lr_gen, lr_disc) = self.lrs();
        Ok(StepGrads {
            semantic: m.semantic.params().collect_grads(&grads),
            edge: None,
            disc_sem: None,
            disc_edge: None,
            log: StepLog {
                iter: self.iter,
                components: comp,
                total,
                disc_sem: 0.0,
                disc_edge: 0.0,
                lr_gen,
                lr_disc,
                entropy_mean: entropy_sum * kb,
            },
        })
    }

    pub fn stage3_step(&mut self, data: &TrainData, pseudo: &[PseudoTarget]) -> Result<StepLog> {
        if self.stage != Stage::SelfTraining {
            return Err(Error::InvalidConfig("stage-3 step requested before pseudo-labelling".into()));
        }
        let grads = self.stage3_grads(data, pseudo)?;
        self.apply(grads)
    }
}
