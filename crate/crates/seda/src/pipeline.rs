//! Run directories and the staged training pipeline on disk.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use seda_core::train::{Model, PseudoTarget, Stage, StepLog, TrainData, Trainer};
use seda_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, BundleIndex};
use crate::checkpoint::{self, CheckpointManifest, SaveInfo};
use crate::codec;
use crate::config::RunConfigFile;
use crate::dataset::{self, DatasetManifest, Split};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PSEUDO_DIR: &str = "pseudo";
pub const RUNS_ENV: &str = "SEDA_RUNS_DIR";

/// Root of all run directories: `$SEDA_RUNS_DIR`, or `runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: u8,
    #[serde(flatten)]
    pub log: StepLog,
}

/// A run directory holding the resolved config, the metrics log, the
/// checkpoints and the pseudo-label bundle.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfigFile,
}

impl Run {
    /// Creates the directory and echoes the resolved config into it. An
    /// existing run is only reused when its training config is identical.
    pub fn create(dir: &Path, config: RunConfigFile) -> Result<Run> {
        config.validate()?;
        let path = dir.join(CONFIG_FILE);
        if path.is_file() {
            let old = Run::open(dir)?;
            if old.config.train_hash() != config.train_hash() {
                return Err(Error::Precondition(format!(
                    "{} was created with a different training config; use a new --out",
                    dir.display()
                )));
            }
        }
        codec::write_file(&path, config.to_json().as_bytes())?;
        Ok(Run { dir: dir.to_path_buf(), config })
    }

    pub fn open(dir: &Path) -> Result<Run> {
        let config = RunConfigFile::load(&dir.join(CONFIG_FILE))?;
        Ok(Run { dir: dir.to_path_buf(), config })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }

    pub fn pseudo_dir(&self) -> PathBuf {
        self.dir.join(PSEUDO_DIR)
    }

    pub fn checkpoint_dir(&self, iteration: usize) -> PathBuf {
        self.dir.join(checkpoint::dir_name(iteration))
    }

    /// The checkpoint that ends stage 1.
    pub fn stage1_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir(self.config.train.stage1_iters)
    }

    pub fn stage3_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir(self.config.train.stage1_iters + self.config.train.stage3_iters)
    }

    /// The most advanced checkpoint of the run.
    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        checkpoint::list(&self.dir)?
            .pop()
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Precondition(format!("{} holds no checkpoint", self.dir.display())))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path)(e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}

/// Drops the records of `stage` from iteration `from` on, and of every later
/// stage.
fn truncate_metrics(path: &Path, stage: u8, from: usize) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path)(e)),
    };
    // kept lines are copied verbatim; a parse and re-print may move the last digit
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: MetricRecord = serde_json::from_str(line).map_err(|e| Error::format(path, e))?;
        if r.stage < stage || (r.stage == stage && r.log.iter < from) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, kept).map_err(Error::io(path))
}

fn append_metric(path: &Path, record: &MetricRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(Error::io(path))
}

/// Where a training loop writes.
struct Sink<'a> {
    dir: &'a Path,
    metrics: PathBuf,
    log_every: usize,
    checkpoint_every: usize,
    config_hash: String,
    parent: Option<String>,
    offset: usize,
}

impl Sink<'_> {
    fn save(&self, t: &Trainer) -> Result<CheckpointManifest> {
        let dir = self.dir.join(checkpoint::dir_name(self.offset + t.iter));
        checkpoint::save(
            &dir,
            t,
            SaveInfo {
                config_hash: &self.config_hash,
                uses_edge: t.uses_edge(),
                parent: self.parent.clone(),
                offset: self.offset,
            },
        )
    }
}

fn run_loop(
    sink: &Sink<'_>,
    t: &mut Trainer,
    mut step: impl FnMut(&mut Trainer) -> seda_core::Result<StepLog>,
) -> Result<CheckpointManifest> {
    let n = t.stage_iters();
    let stage = t.stage as u8;
    while t.iter < n {
        match step(t) {
            Ok(log) => {
                if log.iter % sink.log_every == 0 || t.iter == n {
                    append_metric(&sink.metrics, &MetricRecord { stage, log })?;
                }
                if sink.checkpoint_every > 0 && t.iter.is_multiple_of(sink.checkpoint_every) && t.iter < n {
                    sink.save(t)?;
                }
            }
            Err(e) => {
                // a failed step leaves the weights untouched
                let saved = sink.save(t)?;
                return Err(Error::Precondition(format!(
                    "training stopped at stage {stage} iteration {}: {e}; last good state saved as {}",
                    t.iter,
                    sink.dir.join(checkpoint::dir_name(saved.iteration)).display()
                )));
            }
        }
    }
    sink.save(t)
}

fn sink_for(run: &Run, parent: Option<String>, offset: usize) -> Sink<'_> {
    Sink {
        dir: &run.dir,
        metrics: run.metrics_path(),
        log_every: run.config.log_every,
        checkpoint_every: run.config.checkpoint_every,
        config_hash: run.config.train_hash(),
        parent,
        offset,
    }
}

fn check_resume(run: &Run, m: &CheckpointManifest, stage: Stage, path: &Path) -> Result<()> {
    if m.config_hash != run.config.train_hash() {
        return Err(Error::Precondition(format!(
            "{} was trained with a different config than {}",
            path.display(),
            run.dir.join(CONFIG_FILE).display()
        )));
    }
    if stage == Stage::SelfTraining && m.train != run.config.train {
        return Err(Error::Precondition(format!("{} was trained with different stage-3 settings", path.display())));
    }
    if m.stage != stage as u8 {
        return Err(Error::Precondition(format!("{} is a stage-{} checkpoint", path.display(), m.stage)));
    }
    Ok(())
}

/// Stage 1, from scratch or from a stage-1 checkpoint of the same run config.
pub fn train_stage1(run: &Run, data: &TrainData, resume: Option<&Path>) -> Result<(Trainer, CheckpointManifest)> {
    let cfg = &run.config;
    let mut t = match resume {
        Some(path) => {
            let (t, m) = checkpoint::load(path)?;
            check_resume(run, &m, Stage::Joint, path)?;
            t
        }
        None => Trainer::new(Model::new(&cfg.net, cfg.train.seed)?, cfg.train.clone())?,
    };
    truncate_metrics(&run.metrics_path(), 1, t.iter)?;
    let m = run_loop(&sink_for(run, None, 0), &mut t, |t| t.stage1_step(data))?;
    Ok((t, m))
}

/// Target-train images with their ids, in manifest order.
pub fn target_images(root: &Path, manifest: &DatasetManifest) -> Result<Vec<(String, Tensor)>> {
    Ok(dataset::load_split(root, manifest, Split::TargetTrain)?.into_iter().map(|s| (s.id, s.image)).collect())
}

/// Writes the pseudo-label bundle from the stage-1 checkpoint. A bundle
/// that already exists is returned as is when it stems from that checkpoint.
pub fn generate_pseudo_labels(run: &Run, images: &[(String, Tensor)]) -> Result<BundleIndex> {
    let ckpt = run.stage1_checkpoint();
    let (t, m) = load_existing(&ckpt, "stage-1 checkpoint")?;
    let dir = run.pseudo_dir();
    if dir.join(bundle::INDEX).is_file() {
        let index = bundle::read_index(&dir)?;
        if index.checkpoint_id != m.id {
            return Err(Error::Precondition(format!(
                "{} was generated from checkpoint {}, not {}",
                dir.display(),
                index.checkpoint_id,
                m.id
            )));
        }
        return Ok(index);
    }
    let spec_hash = dataset::spec_hash(&run.config.dataset);
    bundle::write(&dir, &t.model, m.uses_edge, &m.id, &spec_hash, images)
}

fn load_existing(path: &Path, what: &str) -> Result<(Trainer, CheckpointManifest)> {
    if !path.join(checkpoint::MANIFEST).is_file() {
        return Err(Error::Precondition(format!("{what} {} not found", path.display())));
    }
    checkpoint::load(path)
}

/// Stage 3 on the run's pseudo-label bundle.
pub fn train_stage3(run: &Run, data: &TrainData, resume: Option<&Path>) -> Result<(Trainer, CheckpointManifest)> {
    let (index, pseudo) = bundle::read(&run.pseudo_dir())?;
    if pseudo.len() != data.target.len() {
        return Err(Error::Precondition(format!(
            "{} holds {} pseudo-labels for {} target images",
            run.pseudo_dir().display(),
            pseudo.len(),
            data.target.len()
        )));
    }
    let offset = run.config.train.stage1_iters;
    let mut t = match resume {
        Some(path) => {
            let (t, m) = checkpoint::load(path)?;
            check_resume(run, &m, Stage::SelfTraining, path)?;
            if m.parent.as_deref() != Some(index.checkpoint_id.as_str()) {
                return Err(Error::Precondition(format!(
                    "{} does not descend from the checkpoint of the pseudo-label bundle",
                    path.display()
                )));
            }
            t
        }
        None => {
            let (mut t, m) = load_existing(&run.stage1_checkpoint(), "stage-1 checkpoint")?;
            if m.id != index.checkpoint_id {
                return Err(Error::Precondition(format!(
                    "pseudo-label bundle {} was made by checkpoint {}, but stage 1 ended at {}",
                    run.pseudo_dir().display(),
                    index.checkpoint_id,
                    m.id
                )));
            }
            t.begin_self_training();
            t
        }
    };
    truncate_metrics(&run.metrics_path(), 3, t.iter)?;
    let sink = sink_for(run, Some(index.checkpoint_id.clone()), offset);
    let m = run_loop(&sink, &mut t, |t| t.stage3_step(data, &pseudo))?;
    Ok((t, m))
}

pub fn sl_dir(run: &Run, threshold: f64) -> PathBuf {
    run.dir.join(format!("sl_t{threshold}"))
}

/// Standard self-training from the stage-1 checkpoint: pseudo-labels kept
/// where the top class probability exceeds `threshold`, plain cross-entropy.
pub fn sl_threshold_baseline(run: &Run, data: &TrainData, threshold: f64) -> Result<(Trainer, CheckpointManifest)> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Precondition(format!("threshold {threshold} outside [0, 1)")));
    }
    let (mut t, m) = load_existing(&run.stage1_checkpoint(), "stage-1 checkpoint")?;
    let pseudo = data
        .target
        .iter()
        .map(|img| Ok(PseudoTarget::thresholded(&t.model.predict(img, m.uses_edge)?, threshold)))
        .collect::<Result<Vec<_>>>()?;
    let kept: usize = pseudo
        .iter()
        .map(|p| match p {
            PseudoTarget::Thresholded { keep, .. } => keep.iter().filter(|k| **k).count(),
            PseudoTarget::Uasl { labels, .. } => labels.len(),
        })
        .sum();
    if kept == 0 {
        return Err(Error::Precondition(format!("threshold {threshold} keeps no target pixel")));
    }
    t.begin_self_training();
    let dir = sl_dir(run, threshold);
    fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let metrics = dir.join(METRICS_FILE);
    truncate_metrics(&metrics, 3, 0)?;
    let sink = Sink {
        dir: &dir,
        metrics,
        log_every: run.config.log_every,
        checkpoint_every: 0,
        config_hash: run.config.train_hash(),
        parent: Some(m.id),
        offset: run.config.train.stage1_iters,
    };
    let m = run_loop(&sink, &mut t, |t| t.stage3_step(data, &pseudo))?;
    Ok((t, m))
}

/// Stage 1, pseudo-labels and (when `stage3`) stage 3 in one go.
pub fn train_all(
    run: &Run,
    data: &TrainData,
    images: &[(String, Tensor)],
    stage3: bool,
) -> Result<(Trainer, CheckpointManifest)> {
    let out = train_stage1(run, data, None)?;
    if !stage3 {
        return Ok(out);
    }
    generate_pseudo_labels(run, images)?;
    train_stage3(run, data, None)
}

/// Model and edge usage of a checkpoint, for evaluation.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointManifest)> {
    let (t, m) = load_existing(path, "checkpoint")?;
    Ok((t.model, m))
}
