//! The JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use seda_core::nets::NetConfig;
use seda_core::scene::DatasetSpec;
use seda_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

/// α values of the weighting-factor sweep.
pub const ALPHA_GRID: [f64; 7] = [0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 30.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Matching tolerance of the boundary F1, in pixels.
    pub boundary_tol_px: usize,
    /// Seed of the A-distance train/test split.
    pub a_distance_seed: u64,
    /// Vectors per domain written by `export-features`.
    pub export_per_domain: usize,
    /// Confidence thresholds of the self-training baseline.
    pub sl_thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            boundary_tol_px: 1,
            a_distance_seed: 0,
            export_per_domain: 50,
            sl_thresholds: vec![0.0, 0.5, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    /// Dataset root, generated by `gen-data`.
    pub data_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Metrics are logged every this many iterations.
    pub log_every: usize,
    /// Intermediate checkpoints every this many iterations (0: final only).
    pub checkpoint_every: usize,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            data_dir: PathBuf::from("data"),
            dataset: DatasetSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            log_every: 10,
            checkpoint_every: 0,
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.net.num_classes != self.dataset.num_classes || self.net.resolution != self.dataset.resolution {
            return Err(Error::Config(format!(
                "network expects {} classes at {:?}, dataset has {} at {:?}",
                self.net.num_classes, self.net.resolution, self.dataset.num_classes, self.dataset.resolution
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if self.eval.sl_thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(Error::Config("self-training thresholds must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of everything that shapes stage 1. The stage-3 length and
    /// source term are left out so that they can be set when stage 3 starts.
    pub fn train_hash(&self) -> String {
        let train = TrainConfig { stage3_iters: 1, keep_source: true, ..self.train.clone() };
        let key = serde_json::json!({ "dataset": self.dataset, "net": self.net, "train": train });
        codec::sha256_hex(key.to_string().as_bytes())
    }
}
