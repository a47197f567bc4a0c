//! Checkpoints: one little-endian `f32` blob per network, one for the
//! optimizer moments, and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use seda_core::nets::{NetConfig, ParamSet};
use seda_core::train::{Model, Stage, TrainConfig, Trainer};
use seda_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "checkpoint.json";
const NETS: [&str; 4] = ["semantic", "edge", "disc_sem", "disc_edge"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub file: String,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSteps {
    pub disc_sem: u64,
    pub disc_edge: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Digest of the network weights; pseudo-label bundles refer to it.
    pub id: String,
    pub stage: u8,
    /// Iterations completed in `stage`.
    pub stage_iter: usize,
    /// Iterations completed over all stages.
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Whether the edge stream feeds the classifier.
    pub uses_edge: bool,
    /// Checkpoint this stage started from.
    pub parent: Option<String>,
    pub networks: Vec<BlobEntry>,
    pub optimizer: BlobEntry,
    pub adam_steps: AdamSteps,
}

fn blob(tensors: &[&Tensor]) -> Vec<u8> {
    tensors.iter().flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes())).collect()
}

fn entries(names: impl Iterator<Item = String>, tensors: &[&Tensor]) -> Vec<TensorEntry> {
    names.zip(tensors).map(|(name, t)| TensorEntry { name, dims: t.dims().to_vec() }).collect()
}

fn param_sets(m: &Model) -> [&ParamSet; 4] {
    [m.semantic.params(), m.edge.params(), m.disc_sem.params(), m.disc_edge.params()]
}

fn optimizer_tensors(t: &Trainer) -> Vec<(String, &Tensor)> {
    let o = &t.optim;
    let mut out = Vec::new();
    for (tag, sgd) in [("semantic", &o.semantic), ("edge", &o.edge)] {
        out.extend(sgd.velocity.iter().enumerate().map(|(i, v)| (format!("{tag}.velocity.{i}"), v)));
    }
    for (tag, adam) in [("disc_sem", &o.disc_sem), ("disc_edge", &o.disc_edge)] {
        out.extend(adam.m.iter().enumerate().map(|(i, v)| (format!("{tag}.m.{i}"), v)));
        out.extend(adam.v.iter().enumerate().map(|(i, v)| (format!("{tag}.v.{i}"), v)));
    }
    out
}

/// Digest identifying a model's weights.
pub fn model_id(m: &Model) -> String {
    let sums: String =
        param_sets(m).iter().map(|ps| codec::sha256_hex(&blob(&ps.tensors().iter().collect::<Vec<_>>()))).collect();
    codec::sha256_hex(sums.as_bytes())
}

pub struct SaveInfo<'a> {
    pub config_hash: &'a str,
    pub uses_edge: bool,
    pub parent: Option<String>,
    /// Iterations of earlier stages, added to the stage counter.
    pub offset: usize,
}

/// Writes the trainer state to `dir` and returns its manifest.
pub fn save(dir: &Path, t: &Trainer, info: SaveInfo<'_>) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut networks = Vec::new();
    for (name, ps) in NETS.iter().zip(param_sets(&t.model)) {
        let tensors: Vec<&Tensor> = ps.tensors().iter().collect();
        let file = format!("{name}.bin");
        let sha256 = codec::write_file(&dir.join(&file), &blob(&tensors))?;
        networks.push(BlobEntry {
            name: name.to_string(),
            file,
            sha256,
            tensors: entries(ps.names().iter().cloned(), &tensors),
        });
    }
    let opt = optimizer_tensors(t);
    let tensors: Vec<&Tensor> = opt.iter().map(|(_, t)| *t).collect();
    let sha256 = codec::write_file(&dir.join("optimizer.bin"), &blob(&tensors))?;
    let optimizer = BlobEntry {
        name: "optimizer".into(),
        file: "optimizer.bin".into(),
        sha256,
        tensors: entries(opt.iter().map(|(n, _)| n.clone()), &tensors),
    };
    let manifest = CheckpointManifest {
        id: model_id(&t.model),
        stage: t.stage as u8,
        stage_iter: t.iter,
        iteration: info.offset + t.iter,
        seed: t.config.seed,
        config_hash: info.config_hash.to_string(),
        net: t.model.config().clone(),
        train: t.config.clone(),
        uses_edge: info.uses_edge,
        parent: info.parent,
        networks,
        optimizer,
        adam_steps: AdamSteps { disc_sem: t.optim.disc_sem.step, disc_edge: t.optim.disc_edge.step },
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    codec::write_file(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e))
}

fn read_blob(dir: &Path, entry: &BlobEntry) -> Result<Vec<Tensor>> {
    let path = dir.join(&entry.file);
    let bytes = codec::read_checked(&path, &entry.sha256)?;
    let total: usize = entry.tensors.iter().map(|t| t.dims.iter().product::<usize>()).sum();
    if bytes.len() != 4 * total {
        return Err(Error::format(&path, format!("{} bytes for {total} values", bytes.len())));
    }
    let mut values = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    entry
        .tensors
        .iter()
        .map(|t| {
            let n = t.dims.iter().product();
            Ok(Tensor::from_vec(&t.dims, values.by_ref().take(n).collect())?)
        })
        .collect()
}

/// Restores the full trainer state.
pub fn load(dir: &Path) -> Result<(Trainer, CheckpointManifest)> {
    let m = read_manifest(dir)?;
    let mut model = Model::new(&m.net, m.seed)?;
    for (ps, entry) in [
        model.semantic.params_mut(),
        model.edge.params_mut(),
        model.disc_sem.params_mut(),
        model.disc_edge.params_mut(),
    ]
    .into_iter()
    .zip(&m.networks)
    {
        let tensors = read_blob(dir, entry)?;
        let named = entry.tensors.iter().map(|t| t.name.clone()).zip(tensors).collect();
        ps.load(named).map_err(|e| Error::format(&dir.join(&entry.file), e))?;
    }
    if model_id(&model) != m.id {
        return Err(Error::format(&dir.join(MANIFEST), "weights do not match the recorded id"));
    }
    let mut t = Trainer::new(model, m.train.clone())?;
    let mut opt = read_blob(dir, &m.optimizer)?.into_iter();
    let o = &mut t.optim;
    let mut fill = |dst: &mut Vec<Tensor>| -> Result<()> {
        for slot in dst.iter_mut() {
            let v = opt.next().ok_or_else(|| Error::format(&dir.join("optimizer.bin"), "too few tensors"))?;
            if v.dims() != slot.dims() {
                return Err(Error::format(&dir.join("optimizer.bin"), "tensor shape mismatch"));
            }
            *slot = v;
        }
        Ok(())
    };
    fill(&mut o.semantic.velocity)?;
    fill(&mut o.edge.velocity)?;
    for adam in [&mut o.disc_sem, &mut o.disc_edge] {
        fill(&mut adam.m)?;
        fill(&mut adam.v)?;
    }
    o.disc_sem.step = m.adam_steps.disc_sem;
    o.disc_edge.step = m.adam_steps.disc_edge;
    t.stage = if m.stage == 3 { Stage::SelfTraining } else { Stage::Joint };
    t.iter = m.stage_iter;
    Ok((t, m))
}

pub fn dir_name(iteration: usize) -> String {
    format!("ckpt_{iteration}")
}

/// Checkpoint directories of a run, ordered by iteration.
pub fn list(run: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let Ok(rd) = fs::read_dir(run) else {
        return Ok(out);
    };
    for entry in rd {
        let entry = entry.map_err(Error::io(run))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix("ckpt_").and_then(|s| s.parse::<usize>().ok()) {
            if entry.path().join(MANIFEST).is_file() {
                out.push((n, entry.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}
