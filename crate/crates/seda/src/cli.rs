//! The `seda` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::codec;
use crate::config::RunConfigFile;
use crate::dataset::{self, DatasetManifest};
use crate::error::{Error, Result};
use crate::evalkit::{self, ArmResult, EvalSet, Layer};
use crate::pipeline::{self, Run};
use crate::report;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seda", version, about = "Semantic-edge domain adaptation on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (dataset root for gen-data, run directory otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iterations of the stage being trained.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Entropy reweighting factor.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerArg {
    SemanticBottleneck,
    EdgeLast,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic source and target domains.
    GenData(#[command(flatten)] Common),
    /// Train stage 1 (joint adversarial) or stage 3 (self-training).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write the pseudo-label bundle from the stage-1 checkpoint.
    PseudoLabel(#[command(flatten)] Common),
    /// mIoU, boundary F1 and A-distances of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the latest checkpoint of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// A-distances between source and target features of a checkpoint.
    ADistance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the ablation grid.
    Ablate(#[command(flatten)] Common),
    /// Train and evaluate stage 1 over the α grid.
    SweepAlpha(#[command(flatten)] Common),
    /// Thresholded self-training from the stage-1 checkpoint.
    SlBaseline {
        #[command(flatten)]
        common: Common,
        /// Single threshold; defaults to the configured list.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write pooled features of both domains as TSV.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = LayerArg::SemanticBottleneck)]
        layer: LayerArg,
        /// Vectors per domain.
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render the metrics log as SVG plots.
    Report(#[command(flatten)] Common),
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfigFile> {
    let mut cfg = match &common.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(a) = common.alpha {
        cfg.train.weights.alpha = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| pipeline::runs_root().join("default"))
}

/// The run's own config, or the given one when `--config` is passed.
fn open_run(common: &Common) -> Result<Run> {
    let dir = run_dir(common);
    if common.config.is_some() || !dir.join(pipeline::CONFIG_FILE).is_file() {
        Run::create(&dir, resolve(common)?)
    } else {
        let run = Run::open(&dir)?;
        if common.seed.is_some() || common.alpha.is_some() || common.iters.is_some() {
            return Err(Error::Precondition(
                "--seed, --alpha and --iters need --config when reusing a run directory".into(),
            ));
        }
        Ok(run)
    }
}

fn load_dataset(cfg: &RunConfigFile) -> Result<DatasetManifest> {
    let root = &cfg.data_dir;
    if !root.join(dataset::MANIFEST).is_file() {
        return Err(Error::Precondition(format!(
            "dataset manifest {} not found; run gen-data first",
            root.join(dataset::MANIFEST).display()
        )));
    }
    let m = dataset::load_manifest(root)?;
    if m.spec != cfg.dataset {
        return Err(Error::Precondition(format!(
            "the dataset in {} was generated from a different spec",
            root.display()
        )));
    }
    Ok(m)
}

fn class_names(c: usize) -> Vec<&'static str> {
    ["background", "road", "building", "vehicle", "marking"].iter().take(c).copied().collect()
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

fn checkpoint_or_latest(run: &Run, ckpt: Option<PathBuf>) -> Result<PathBuf> {
    match ckpt {
        Some(p) => Ok(p),
        None => run.latest_checkpoint(),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(common) => {
            let mut cfg = resolve(&common)?;
            if let Some(out) = common.out {
                cfg.data_dir = out;
            }
            dataset::generate_dataset(&cfg.dataset, &cfg.data_dir)?;
            println!("{}", cfg.data_dir.join(dataset::MANIFEST).display());
        }
        Command::Train { common, stage, resume } => {
            if stage == 2 {
                return Err(Error::Precondition("stage 2 is pseudo-labelling; use the pseudo-label command".into()));
            }
            let mut cfg = match (&common.config, resume.is_some() || stage == 3) {
                (None, true) if run_dir(&common).join(pipeline::CONFIG_FILE).is_file() => {
                    Run::open(&run_dir(&common))?.config
                }
                _ => resolve(&common)?,
            };
            if let Some(n) = common.iters {
                if stage == 1 {
                    cfg.train.stage1_iters = n;
                } else {
                    cfg.train.stage3_iters = n;
                }
            }
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            if let Some(a) = common.alpha {
                cfg.train.weights.alpha = a;
            }
            let run = Run::create(&run_dir(&common), cfg)?;
            if stage == 3 {
                // fail on a missing bundle before touching the dataset
                crate::bundle::read_index(&run.pseudo_dir())?;
            }
            let manifest = load_dataset(&run.config)?;
            let data = dataset::load_train_data(&run.config.data_dir, &manifest, run.config.train.boundary_thickness)?;
            let (_, m) = if stage == 1 {
                pipeline::train_stage1(&run, &data, resume.as_deref())?
            } else {
                pipeline::train_stage3(&run, &data, resume.as_deref())?
            };
            println!("{}", run.checkpoint_dir(m.iteration).display());
        }
        Command::PseudoLabel(common) => {
            let run = open_run(&common)?;
            let manifest = load_dataset(&run.config)?;
            let images = pipeline::target_images(&run.config.data_dir, &manifest)?;
            pipeline::generate_pseudo_labels(&run, &images)?;
            println!("{}", run.pseudo_dir().display());
        }
        Command::Evaluate { common, checkpoint } => {
            let run = open_run(&common)?;
            let manifest = load_dataset(&run.config)?;
            let set = EvalSet::load(&run.config.data_dir, &manifest)?;
            let ckpt = checkpoint_or_latest(&run, checkpoint)?;
            let report = evalkit::evaluate_checkpoint(&run, &ckpt, &set)?;
            let iteration = checkpoint::read_manifest(&ckpt)?.iteration;
            let path = run.dir.join(format!("eval_{iteration}.json"));
            codec::write_file(&path, &serde_json::to_vec_pretty(&report).expect("report serializes"))?;
            print_json(&report);
        }
        Command::ADistance { common, checkpoint } => {
            let run = open_run(&common)?;
            let manifest = load_dataset(&run.config)?;
            let set = EvalSet::load(&run.config.data_dir, &manifest)?;
            let ckpt = checkpoint_or_latest(&run, checkpoint)?;
            print_json(&evalkit::evaluate_checkpoint(&run, &ckpt, &set)?.a_distance);
        }
        Command::Ablate(common) => harness(&common, "ablation", evalkit::ablation_arms)?,
        Command::SweepAlpha(common) => harness(&common, "alpha_sweep", evalkit::alpha_arms)?,
        Command::SlBaseline { common, threshold } => {
            let run = open_run(&common)?;
            let manifest = load_dataset(&run.config)?;
            let data = dataset::load_train_data(&run.config.data_dir, &manifest, run.config.train.boundary_thickness)?;
            let set = EvalSet::load(&run.config.data_dir, &manifest)?;
            let thresholds = threshold.map_or_else(|| run.config.eval.sl_thresholds.clone(), |t| vec![t]);
            let mut rows = Vec::new();
            for t in thresholds {
                pipeline::sl_threshold_baseline(&run, &data, t)?;
                let dir = pipeline::sl_dir(&run, t);
                let ckpt =
                    dir.join(checkpoint::dir_name(run.config.train.stage1_iters + run.config.train.stage3_iters));
                let report = evalkit::evaluate_checkpoint(&run, &ckpt, &set)?;
                rows.push(ArmResult { arm: format!("SL T={t}"), checkpoint: ckpt, report });
            }
            let uasl = run.stage3_checkpoint();
            if uasl.join(checkpoint::MANIFEST).is_file() {
                let report = evalkit::evaluate_checkpoint(&run, &uasl, &set)?;
                rows.push(ArmResult { arm: "UASL".into(), checkpoint: uasl, report });
            }
            let (md, _) =
                evalkit::write_tables(&run.dir, "sl_baseline", &rows, &class_names(run.config.dataset.num_classes))?;
            println!("{}", md.display());
        }
        Command::ExportFeatures { common, layer, n, checkpoint } => {
            let run = open_run(&common)?;
            let manifest = load_dataset(&run.config)?;
            let set = EvalSet::load(&run.config.data_dir, &manifest)?;
            let ckpt = checkpoint_or_latest(&run, checkpoint)?;
            let (model, m) = pipeline::load_model(&ckpt)?;
            let (layer, name) = match layer {
                LayerArg::SemanticBottleneck => (Layer::SemanticBottleneck, "semantic_bottleneck"),
                LayerArg::EdgeLast => (Layer::EdgeLast, "edge_last"),
            };
            let n = n.unwrap_or(run.config.eval.export_per_domain);
            let out = run.dir.join(format!("features_{name}_{}.tsv", m.iteration));
            evalkit::export_features(&model, m.uses_edge, &set, layer, n, &out)?;
            println!("{}", out.display());
        }
        Command::Report(common) => {
            let run = open_run(&common)?;
            let paths = report::render_run(&run.metrics_path(), run.config.train.stage1_iters, &run.dir.join("plots"))?;
            for p in paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn harness(common: &Common, stem: &str, arms: fn(&seda_core::train::TrainConfig) -> Vec<evalkit::Arm>) -> Result<()> {
    let mut cfg = resolve(common)?;
    if let Some(n) = common.iters {
        cfg.train.stage1_iters = n;
    }
    let dir = run_dir(common);
    let manifest = load_dataset(&cfg)?;
    let root = cfg.data_dir.clone();
    let data = dataset::load_train_data(&root, &manifest, cfg.train.boundary_thickness)?;
    let images = pipeline::target_images(&root, &manifest)?;
    let set = EvalSet::load(&root, &manifest)?;
    codec::write_file(&dir.join(pipeline::CONFIG_FILE), cfg.to_json().as_bytes())?;
    let rows = evalkit::run_arms(&cfg, &arms(&cfg.train), &dir, &data, &images, &set)?;
    let (md, _) = evalkit::write_tables(&dir, stem, &rows, &class_names(cfg.dataset.num_classes))?;
    println!("{}", md.display());
    Ok(())
}
