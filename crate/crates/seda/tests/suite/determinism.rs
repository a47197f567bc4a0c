//! Two identical command-line runs must leave identical files behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use seda::config::RunConfigFile;
use seda_core::scene::DatasetSpec;
use seda_core::train::TrainConfig;

use super::runner::Case;

pub fn cases() -> Vec<Case> {
    vec![("train twice gives byte-identical checkpoints and reports", repeat_runs)]
}

pub fn seda(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_seda")).args(args).output().expect("seda binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// A config small enough for a few seconds of training, with enough images
/// for the A-distance.
pub fn write_config(dir: &Path) -> PathBuf {
    let cfg = RunConfigFile {
        data_dir: dir.join("data"),
        dataset: DatasetSpec { num_images_per_domain: 24, ..DatasetSpec::default() },
        train: TrainConfig { stage1_iters: 8, stage3_iters: 4, batch_size: 2, ..TrainConfig::default() },
        log_every: 2,
        checkpoint_every: 4,
        ..RunConfigFile::default()
    };
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = seda(args);
    assert_eq!(code, 0, "seda {args:?} failed: {stderr}");
    stdout
}

fn repeat_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let config = config.to_str().unwrap();
    ok(&["gen-data", "--config", config]);
    let mut trees = Vec::new();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        let run = run.to_str().unwrap();
        ok(&["train", "--config", config, "--out", run]);
        ok(&["pseudo-label", "--out", run]);
        ok(&["train", "--stage", "3", "--out", run]);
        reports.push(ok(&["evaluate", "--out", run]));
        trees.push(files(Path::new(run)));
    }
    let names: Vec<_> = trees[0].iter().map(|(p, _)| p.display().to_string()).collect();
    for want in ["ckpt_8/checkpoint.json", "ckpt_12/semantic.bin", "pseudo/index.json", "metrics.jsonl", "eval_12.json"]
    {
        assert!(names.iter().any(|n| n == want), "missing {want} in {names:?}");
    }
    assert_eq!(trees[0].len(), trees[1].len());
    for ((pa, a), (pb, b)) in trees[0].iter().zip(&trees[1]) {
        assert_eq!(pa, pb);
        assert!(a == b, "{} differs between runs", pa.display());
    }
    assert_eq!(reports[0], reports[1]);
}
