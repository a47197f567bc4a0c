//! Evaluation of checkpoints and the comparison harnesses built on it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use seda_core::adist::{a_distance, ADistanceReport, FeatureTag};
use seda_core::losses::TermMask;
use seda_core::metrics::{boundary_f1, compute_iou, BoundaryScore, ConfusionMatrix};
use seda_core::scene::labels_to_boundary;
use seda_core::train::{Model, TrainConfig, TrainData};
use seda_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::config::{RunConfigFile, ALPHA_GRID};
use crate::dataset::{self, DatasetManifest, DomainSample, Split};
use crate::error::{Error, Result};
use crate::pipeline::{self, Run};

/// Images evaluation needs: labelled target-eval samples and the source
/// training images.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub eval: Vec<DomainSample>,
    pub source: Vec<DomainSample>,
    pub num_classes: usize,
    pub resolution: (usize, usize),
}

impl EvalSet {
    pub fn load(root: &Path, manifest: &DatasetManifest) -> Result<Self> {
        Ok(EvalSet {
            eval: dataset::load_split(root, manifest, Split::TargetEval)?,
            source: dataset::load_split(root, manifest, Split::SourceTrain)?,
            num_classes: manifest.spec.num_classes,
            resolution: manifest.spec.resolution,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ADistancePair {
    pub semantic: ADistanceReport,
    /// Absent when the model has no trained edge stream.
    pub edge: Option<ADistanceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub a_distance: ADistancePair,
    /// Mean over target-eval images; absent without an edge stream.
    pub boundary_f1: Option<BoundaryScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    SemanticBottleneck,
    EdgeLast,
}

#[derive(Debug, Clone, Default)]
struct Pooled {
    semantic: Vec<Vec<f64>>,
    edge: Vec<Vec<f64>>,
}

impl Pooled {
    fn push(&mut self, p: &seda_core::train::Prediction) {
        self.semantic.push(p.semantic_pooled.clone());
        if let Some(e) = &p.edge_pooled {
            self.edge.push(e.clone());
        }
    }
}

/// mIoU and boundary F1 on target-eval, and the A-distance between pooled
/// source and target features.
pub fn evaluate(
    model: &Model,
    uses_edge: bool,
    checkpoint_id: &str,
    set: &EvalSet,
    tol_px: usize,
    thickness: usize,
    seed: u64,
) -> Result<EvalReport> {
    let (h, w) = set.resolution;
    let mut cm = ConfusionMatrix::new(set.num_classes);
    let mut tgt = Pooled::default();
    let mut scores: Vec<BoundaryScore> = Vec::new();
    for s in &set.eval {
        let label =
            s.label.as_ref().ok_or_else(|| Error::Precondition(format!("eval sample {} has no label", s.id)))?;
        let p = model.predict(&s.image, uses_edge)?;
        cm.accumulate(label, &p.labels)?;
        if let Some(b) = &p.boundary {
            let gt = labels_to_boundary(label, h, w, thickness)?;
            scores.push(boundary_f1(b, &gt, tol_px)?);
        }
        tgt.push(&p);
    }
    let mut src = Pooled::default();
    for s in &set.source {
        src.push(&model.predict(&s.image, uses_edge)?);
    }
    let iou = compute_iou(&cm)?;
    let semantic = a_distance(&src.semantic, &tgt.semantic, FeatureTag::Semantic, seed)?;
    let edge = if uses_edge { Some(a_distance(&src.edge, &tgt.edge, FeatureTag::Edge, seed)?) } else { None };
    let boundary = (!scores.is_empty()).then(|| {
        let n = scores.len() as f64;
        BoundaryScore {
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        }
    });
    Ok(EvalReport {
        checkpoint_id: checkpoint_id.to_string(),
        per_class_iou: iou.per_class,
        miou: iou.miou,
        a_distance: ADistancePair { semantic, edge },
        boundary_f1: boundary,
    })
}

/// Evaluates a checkpoint directory with the run's options.
pub fn evaluate_checkpoint(run: &Run, ckpt: &Path, set: &EvalSet) -> Result<EvalReport> {
    let (model, m) = pipeline::load_model(ckpt)?;
    let cfg = &run.config;
    evaluate(
        &model,
        m.uses_edge,
        &m.id,
        set,
        cfg.eval.boundary_tol_px,
        cfg.train.boundary_thickness,
        cfg.eval.a_distance_seed,
    )
}

/// Writes `n` pooled vectors per domain as TSV: `domain`, `id`, then one
/// column per channel.
pub fn export_features(
    model: &Model,
    uses_edge: bool,
    set: &EvalSet,
    layer: Layer,
    n: usize,
    out: &Path,
) -> Result<String> {
    if layer == Layer::EdgeLast && !uses_edge {
        return Err(Error::Precondition("this checkpoint has no trained edge stream".into()));
    }
    let avail = set.source.len().min(set.eval.len());
    if n > avail {
        return Err(Error::Precondition(format!("{n} vectors per domain requested, the dataset has {avail}")));
    }
    let mut rows = Vec::with_capacity(2 * n);
    for (domain, samples) in [("source", &set.source), ("target", &set.eval)] {
        for s in samples.iter().take(n) {
            let p = model.predict(&s.image, uses_edge)?;
            let v = match layer {
                Layer::SemanticBottleneck => p.semantic_pooled,
                Layer::EdgeLast => p.edge_pooled.expect("edge stream in use"),
            };
            rows.push((domain, s.id.clone(), v));
        }
    }
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut text = String::from("domain\tid");
    for i in 0..dim {
        write!(text, "\tf{i}").unwrap();
    }
    text.push('\n');
    for (domain, id, v) in rows {
        text.push_str(domain);
        text.push('\t');
        text.push_str(&id);
        for x in v {
            write!(text, "\t{x:e}").unwrap();
        }
        text.push('\n');
    }
    codec::write_file(out, text.as_bytes())
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub checkpoint: PathBuf,
    pub report: EvalReport,
}

/// One arm of a comparison: a training config and whether stage 3 runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub train: TrainConfig,
    pub stage3: bool,
}

/// The ablation grid, each arm adding one element to the previous one:
/// plain entropy adversarial training, entropy reweighting, the edge
/// segmentation and consistency losses, the edge adversarial loss, and
/// uncertainty-adaptive self-training. Arms differ from `full` only in
/// the loss terms they switch off (α = 0 switches off the reweighting).
pub fn ablation_arms(full: &TrainConfig) -> Vec<Arm> {
    let base = TermMask {
        lovasz: full.terms.lovasz,
        sem_adv: true,
        edge_seg: false,
        edge_adv: false,
        edge_con: false,
        uasl: false,
    };
    let with = |terms: TermMask, alpha: f64| {
        let mut t = full.clone();
        t.terms = terms;
        t.weights.alpha = alpha;
        t
    };
    let a = full.weights.alpha;
    let con = TermMask { edge_seg: true, edge_con: true, ..base };
    let adv = TermMask { edge_adv: true, ..con };
    vec![
        Arm { name: "baseline".into(), train: with(base, 0.0), stage3: false },
        Arm { name: "+ERW".into(), train: with(base, a), stage3: false },
        Arm { name: "+L_eg^con".into(), train: with(con, a), stage3: false },
        Arm { name: "+L_eg^adv".into(), train: with(adv, a), stage3: false },
        Arm { name: "+UASL".into(), train: with(adv, a), stage3: true },
    ]
}

/// Stage-1 runs of the full config at every α of the sweep grid.
pub fn alpha_arms(full: &TrainConfig) -> Vec<Arm> {
    ALPHA_GRID
        .iter()
        .map(|&alpha| {
            let mut t = full.clone();
            t.weights.alpha = alpha;
            Arm { name: format!("alpha={alpha}"), train: t, stage3: false }
        })
        .collect()
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '_' })
        .collect::<String>()
}

/// Trains and evaluates every arm under `dir`. Arms sharing a training
/// config share one run directory, so a stage-3 arm reuses the stage-1
/// checkpoint of its predecessor.
pub fn run_arms(
    base: &RunConfigFile,
    arms: &[Arm],
    dir: &Path,
    data: &TrainData,
    images: &[(String, Tensor)],
    set: &EvalSet,
) -> Result<Vec<ArmResult>> {
    let mut runs: Vec<(TrainConfig, Run)> = Vec::new();
    let mut out = Vec::new();
    for arm in arms {
        let run = match runs.iter().find(|(t, _)| *t == arm.train) {
            Some((_, r)) => r.clone(),
            None => {
                let cfg = RunConfigFile { train: arm.train.clone(), ..base.clone() };
                let run = Run::create(&dir.join(slug(&arm.name)), cfg)?;
                pipeline::train_stage1(&run, data, None)?;
                runs.push((arm.train.clone(), run.clone()));
                run
            }
        };
        let ckpt = if arm.stage3 {
            pipeline::generate_pseudo_labels(&run, images)?;
            pipeline::train_stage3(&run, data, None)?;
            run.stage3_checkpoint()
        } else {
            run.stage1_checkpoint()
        };
        let report = evaluate_checkpoint(&run, &ckpt, set)?;
        log::info!("{}: mIoU {:.4}", arm.name, report.miou);
        out.push(ArmResult { arm: arm.name.clone(), checkpoint: ckpt, report });
    }
    Ok(out)
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Markdown table: per-class IoU, mIoU and the A-distances of every arm.
pub fn markdown_table(rows: &[ArmResult], class_names: &[&str]) -> String {
    let mut s = String::from("| arm |");
    for n in class_names {
        write!(s, " {n} |").unwrap();
    }
    s.push_str(" mIoU | d_A sem | d_A edge |\n|---|");
    for _ in class_names {
        s.push_str("---|");
    }
    s.push_str("---|---|---|\n");
    for r in rows {
        write!(s, "| {} |", r.arm).unwrap();
        for v in &r.report.per_class_iou {
            match v {
                Some(v) => write!(s, " {} |", pct(*v)).unwrap(),
                None => s.push_str(" - |"),
            }
        }
        let edge = r.report.a_distance.edge.as_ref().map_or("-".to_string(), |e| format!("{:.3}", e.a_distance));
        writeln!(s, " {} | {:.3} | {} |", pct(r.report.miou), r.report.a_distance.semantic.a_distance, edge).unwrap();
    }
    s
}

/// Writes `<stem>.md` and `<stem>.json` into `dir`.
pub fn write_tables(dir: &Path, stem: &str, rows: &[ArmResult], class_names: &[&str]) -> Result<(PathBuf, PathBuf)> {
    let md = dir.join(format!("{stem}.md"));
    let json = dir.join(format!("{stem}.json"));
    codec::write_file(&md, markdown_table(rows, class_names).as_bytes())?;
    codec::write_file(&json, &serde_json::to_vec_pretty(rows).expect("rows serialize"))?;
    Ok((md, json))
}
