//! Pseudo-label bundles: per target image a label map and an entropy map,
//! tied to the checkpoint that produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use seda_core::train::{Model, PseudoTarget};
use seda_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

pub const INDEX: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    /// Id of the checkpoint whose predictions these are.
    pub checkpoint_id: String,
    pub spec_hash: String,
    pub num_classes: usize,
    pub resolution: (usize, usize),
    pub ids: Vec<String>,
    pub sha256: BTreeMap<String, String>,
}

fn label_file(id: &str) -> String {
    format!("{id}_labels.png")
}

fn entropy_file(id: &str) -> String {
    format!("{id}_entropy.png")
}

/// Predicts every image with the edge stream as configured and writes the
/// bundle. Existing bundles are never overwritten.
pub fn write(
    dir: &Path,
    model: &Model,
    use_edge: bool,
    checkpoint_id: &str,
    spec_hash: &str,
    images: &[(String, Tensor)],
) -> Result<BundleIndex> {
    if dir.join(INDEX).exists() {
        return Err(Error::Precondition(format!("pseudo-label bundle {} already exists", dir.display())));
    }
    let cfg = model.config();
    let (h, w) = cfg.resolution;
    let mut sha256 = BTreeMap::new();
    for (id, image) in images {
        let p = model.predict(image, use_edge)?;
        let lf = label_file(id);
        let ef = entropy_file(id);
        sha256.insert(
            lf.clone(),
            codec::write_file(&dir.join(&lf), &codec::encode_labels(&p.labels, h, w, cfg.num_classes))?,
        );
        sha256.insert(ef.clone(), codec::write_file(&dir.join(&ef), &codec::encode_unit16(p.entropy.data(), h, w))?);
    }
    let index = BundleIndex {
        checkpoint_id: checkpoint_id.to_string(),
        spec_hash: spec_hash.to_string(),
        num_classes: cfg.num_classes,
        resolution: (h, w),
        ids: images.iter().map(|(id, _)| id.clone()).collect(),
        sha256,
    };
    codec::write_file(&dir.join(INDEX), &serde_json::to_vec_pretty(&index).expect("index serializes"))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<BundleIndex> {
    let path = dir.join(INDEX);
    if !path.is_file() {
        return Err(Error::Precondition(format!("pseudo-label bundle {} not found", path.display())));
    }
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e))
}

/// Reads the bundle back as stage-3 targets, in index order.
pub fn read(dir: &Path) -> Result<(BundleIndex, Vec<PseudoTarget>)> {
    let index = read_index(dir)?;
    let (h, w) = index.resolution;
    let checked = |rel: &str| -> Result<Vec<u8>> {
        let path = dir.join(rel);
        let sum = index.sha256.get(rel).ok_or_else(|| Error::format(&path, "no checksum recorded"))?;
        codec::read_checked(&path, sum)
    };
    let mut out = Vec::with_capacity(index.ids.len());
    for id in &index.ids {
        let lf = label_file(id);
        let (lh, lw, labels) = codec::decode_labels(&dir.join(&lf), &checked(&lf)?, index.num_classes)?;
        let ef = entropy_file(id);
        let (eh, ew, entropy) = codec::decode_unit16(&dir.join(&ef), &checked(&ef)?)?;
        if (lh, lw) != (h, w) || (eh, ew) != (h, w) {
            return Err(Error::format(&dir.join(&lf), format!("maps of {id} are not {h}x{w}")));
        }
        out.push(PseudoTarget::Uasl { labels, entropy });
    }
    Ok((index, out))
}
