//! On-disk two-domain benchmark: generation, manifest and loading.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! source/images/<id>.png   source/labels/<id>.png
//! target/images/<id>.png   target/labels/<id>.png   (held out)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use seda_core::scene::{labels_to_boundary, render_scene, DatasetSpec};
use seda_core::train::{SourceSample, TrainData};
use seda_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    SourceTrain,
    TargetTrain,
    /// Target images with their held-out labels.
    TargetEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub id: String,
    pub image: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: Split,
    pub ids: Vec<String>,
    pub files: Vec<SampleFiles>,
    /// Checksum of every file listed in `files`, keyed by relative path.
    pub sha256: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub spec_hash: String,
    pub splits: Vec<SplitEntry>,
}

impl DatasetManifest {
    pub fn split(&self, name: Split) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Precondition(format!("manifest has no {name:?} split")))
    }

    pub fn domain(split: Split) -> Domain {
        match split {
            Split::SourceTrain => Domain::Source,
            Split::TargetTrain | Split::TargetEval => Domain::Target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub id: String,
    pub domain: Domain,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: Option<Vec<u8>>,
}

pub fn spec_hash(spec: &DatasetSpec) -> String {
    codec::sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}

pub fn sample_id(index: usize) -> String {
    format!("{index:04}")
}

/// Renders every scene of `spec` into `root` and writes the manifest.
pub fn generate_dataset(spec: &DatasetSpec, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let (h, w) = spec.resolution;
    let c = spec.num_classes;
    let mut source = SplitEntry { name: Split::SourceTrain, ids: vec![], files: vec![], sha256: BTreeMap::new() };
    let mut target = SplitEntry { name: Split::TargetTrain, ids: vec![], files: vec![], sha256: BTreeMap::new() };
    let mut eval = SplitEntry { name: Split::TargetEval, ids: vec![], files: vec![], sha256: BTreeMap::new() };
    for i in 0..spec.num_images_per_domain {
        let scene = render_scene(spec, i)?;
        let id = sample_id(i);
        let src_img = format!("source/images/{id}.png");
        let src_lbl = format!("source/labels/{id}.png");
        let tgt_img = format!("target/images/{id}.png");
        let tgt_lbl = format!("target/labels/{id}.png");
        let labels = codec::encode_labels(&scene.label, h, w, c);
        let s_img = codec::write_file(&root.join(&src_img), &codec::encode_rgb(&scene.source, h, w))?;
        let s_lbl = codec::write_file(&root.join(&src_lbl), &labels)?;
        let t_img = codec::write_file(&root.join(&tgt_img), &codec::encode_rgb(&scene.target, h, w))?;
        let t_lbl = codec::write_file(&root.join(&tgt_lbl), &labels)?;

        source.ids.push(id.clone());
        source.files.push(SampleFiles { id: id.clone(), image: src_img.clone(), label: Some(src_lbl.clone()) });
        source.sha256.insert(src_img, s_img);
        source.sha256.insert(src_lbl, s_lbl);
        target.ids.push(id.clone());
        target.files.push(SampleFiles { id: id.clone(), image: tgt_img.clone(), label: None });
        target.sha256.insert(tgt_img.clone(), t_img.clone());
        eval.ids.push(id.clone());
        eval.files.push(SampleFiles { id, image: tgt_img.clone(), label: Some(tgt_lbl.clone()) });
        eval.sha256.insert(tgt_img, t_img);
        eval.sha256.insert(tgt_lbl, t_lbl);
    }
    let manifest =
        DatasetManifest { spec: spec.clone(), spec_hash: spec_hash(spec), splits: vec![source, target, eval] };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    codec::write_file(&root.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST);
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    let m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e))?;
    if spec_hash(&m.spec) != m.spec_hash {
        return Err(Error::format(&path, "spec hash does not match the recorded spec"));
    }
    Ok(m)
}

/// Checks every listed file against its checksum.
pub fn verify(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    for split in &manifest.splits {
        for (rel, sum) in &split.sha256 {
            codec::read_checked(&root.join(rel), sum)?;
        }
    }
    Ok(())
}

/// Decodes the requested samples of one split. Labels are only returned
/// for splits that carry them.
pub fn load_batch(root: &Path, manifest: &DatasetManifest, split: Split, ids: &[String]) -> Result<Vec<DomainSample>> {
    let entry = manifest.split(split)?;
    let (h, w) = manifest.spec.resolution;
    ids.iter()
        .map(|id| {
            let files = entry
                .files
                .iter()
                .find(|f| &f.id == id)
                .ok_or_else(|| Error::Precondition(format!("id {id} is not in the {split:?} split")))?;
            let checked = |rel: &str| -> Result<Vec<u8>> {
                let sum =
                    entry.sha256.get(rel).ok_or_else(|| Error::format(&root.join(rel), "no checksum recorded"))?;
                codec::read_checked(&root.join(rel), sum)
            };
            let path = root.join(&files.image);
            let (ih, iw, data) = codec::decode_rgb(&path, &checked(&files.image)?)?;
            if (ih, iw) != (h, w) {
                return Err(Error::format(&path, format!("image is {ih}x{iw}, spec says {h}x{w}")));
            }
            let label = match &files.label {
                Some(rel) => {
                    let path = root.join(rel);
                    let (lh, lw, l) = codec::decode_labels(&path, &checked(rel)?, manifest.spec.num_classes)?;
                    if (lh, lw) != (h, w) {
                        return Err(Error::format(&path, format!("label map is {lh}x{lw}, spec says {h}x{w}")));
                    }
                    Some(l)
                }
                None => None,
            };
            Ok(DomainSample {
                id: id.clone(),
                domain: DatasetManifest::domain(split),
                image: Tensor::from_vec(&[3, h, w], data)?,
                label,
            })
        })
        .collect()
}

pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<DomainSample>> {
    load_batch(root, manifest, split, &manifest.split(split)?.ids)
}

/// Labelled source samples with boundary ground truth, and the unlabelled
/// target images.
pub fn load_train_data(root: &Path, manifest: &DatasetManifest, thickness: usize) -> Result<TrainData> {
    let (h, w) = manifest.spec.resolution;
    let source = load_split(root, manifest, Split::SourceTrain)?
        .into_iter()
        .map(|s| {
            let label = s.label.expect("source samples carry labels");
            let boundary = labels_to_boundary(&label, h, w, thickness)?;
            Ok(SourceSample { image: s.image, label, boundary })
        })
        .collect::<Result<Vec<_>>>()?;
    let target = load_split(root, manifest, Split::TargetTrain)?.into_iter().map(|s| s.image).collect();
    Ok(TrainData { source, target })
}
