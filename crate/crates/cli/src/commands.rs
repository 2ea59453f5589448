//! Command implementations behind the CLI surface. Each command returns a
//! typed error carrying its process exit code.
//!
//! Exit codes: 0 success; 1 per-item failures or general errors; 2 missing
//! or unreadable checkpoint; 3 empty or malformed dataset; 64 usage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use structfuse_core::color::yuv_planes_to_rgb;
use structfuse_core::metrics::{self, ReportMetadata};
use structfuse_core::plane::Plane;
use structfuse_core::structmap::{structure_pyramid_gt, Polarity};

use crate::checkpoint;
use crate::dataset::{self, DatasetSplit, DatasetError};
use crate::manifest::RunManifest;
use crate::report;
use crate::trainer::{self, RunOptions, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURES: i32 = 1;
pub const EXIT_MISSING_CHECKPOINT: i32 = 2;
pub const EXIT_EMPTY_DATASET: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CmdError {}

pub type CmdResult = Result<(), CmdError>;

fn general(e: impl std::fmt::Display) -> CmdError {
    CmdError::new(EXIT_FAILURES, e.to_string())
}

fn discover(root: &Path) -> Result<DatasetSplit, CmdError> {
    DatasetSplit::discover(root).map_err(|e| match e {
        DatasetError::Empty(_) | DatasetError::BadLayout(_) => {
            CmdError::new(EXIT_EMPTY_DATASET, e.to_string())
        }
        other => general(other),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| general(format!("cannot create {}: {e}", dir.display())))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CmdError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(general)
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

pub struct FuseArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed: Option<u64>,
}

/// Fuses every pair in the dataset and writes one RGB PNG per pair (fused
/// luminance recombined with the visible chroma).
pub fn cmd_fuse(args: &FuseArgs) -> CmdResult {
    let started = Instant::now();
    let ckpt = checkpoint::load(&args.checkpoint)
        .map_err(|e| CmdError::new(EXIT_MISSING_CHECKPOINT, e.to_string()))?;
    let spf_enabled = ckpt.spf_enabled;
    let model = ckpt.into_model().map_err(general)?;
    let split = discover(&args.data)?;
    ensure_dir(&args.out)?;
    let divisor = model.config().divisor();

    let pool = thread_pool(args.jobs)?;
    let results: Vec<(String, Result<(), String>)> = pool.install(|| {
        split
            .pair_ids
            .par_iter()
            .map(|id| {
                let one = || -> Result<(), String> {
                    let pair = split.load_pair(id).map_err(|e| e.to_string())?;
                    let (padded, (h, w)) = pair.pad_to_multiple(divisor);
                    let fused = model
                        .forward_fusion(&padded, spf_enabled, false)
                        .map_err(|e| e.to_string())?;
                    let fused_y = fused.fused_y.crop(0, 0, h, w).map_err(|e| e.to_string())?;
                    let rgb = yuv_planes_to_rgb(&fused_y, &pair.vi_u, &pair.vi_v)
                        .map_err(|e| e.to_string())?;
                    dataset::save_rgb_png(&args.out.join(format!("{id}.png")), &rgb)
                        .map_err(|e| e.to_string())?;
                    Ok(())
                };
                (id.clone(), one())
            })
            .collect()
    });

    let mut failures = 0usize;
    let mut outputs = Vec::new();
    for (id, res) in &results {
        match res {
            Ok(()) => outputs.push(format!("{id}.png")),
            Err(msg) => {
                failures += 1;
                eprintln!("fuse: pair {id} failed: {msg}");
            }
        }
    }

    let mut manifest = RunManifest::new("fuse");
    manifest.seed = args.seed;
    manifest.config = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "spf_enabled": spf_enabled,
        "model_config": model.config(),
    });
    manifest.inputs = vec![args.data.display().to_string()];
    manifest.outputs = outputs;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out).map_err(general)?;

    if failures > 0 {
        return Err(CmdError::new(
            EXIT_FAILURES,
            format!("{failures} pair(s) failed"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub struct EvalArgs {
    pub data: PathBuf,
    pub fused: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
}

fn find_fused(dir: &Path, id: &str) -> Option<PathBuf> {
    for ext in ["png", "jpg", "jpeg", "bmp"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Some(p);
        }
    }
    None
}

/// Scores fused images against their sources and writes the report as CSV
/// and JSON.
pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let started = Instant::now();
    let split = discover(&args.data)?;
    ensure_dir(&args.out)?;

    let pool = thread_pool(args.jobs)?;
    type Loaded = Result<(String, Plane, Plane, Plane), (String, String)>;
    let loaded: Vec<Loaded> = pool.install(|| {
        split
            .pair_ids
            .par_iter()
            .map(|id| {
                let pair = split
                    .load_pair(id)
                    .map_err(|e| (id.clone(), e.to_string()))?;
                let fused_path = find_fused(&args.fused, id)
                    .ok_or_else(|| (id.clone(), "missing fused image".to_string()))?;
                let fused = dataset::load_gray_plane(&fused_path)
                    .map_err(|e| (id.clone(), e.to_string()))?;
                if fused.h() != pair.h() || fused.w() != pair.w() {
                    return Err((id.clone(), "fused image dimensions differ".to_string()));
                }
                Ok((id.clone(), pair.ir_y, pair.vi_y, fused))
            })
            .collect()
    });

    let mut items = Vec::new();
    let mut load_failures = Vec::new();
    for entry in loaded {
        match entry {
            Ok((id, ir, vi, fused)) => items.push((id, ir, vi, fused)),
            Err(pair) => load_failures.push(pair),
        }
    }
    if items.is_empty() {
        return Err(CmdError::new(
            EXIT_FAILURES,
            "no pair could be evaluated (missing fused images?)",
        ));
    }

    let checkpoint_id = RunManifest::read(&args.fused)
        .ok()
        .and_then(|m| {
            m.config
                .get("checkpoint")
                .and_then(|v| v.as_str())
                .map(String::from)
        })
        .unwrap_or_else(|| "unknown".to_string());
    let metadata = ReportMetadata {
        dataset: args
            .data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.data.display().to_string()),
        checkpoint_id,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let mut metric_report = metrics::evaluate_dataset(items, metadata).map_err(general)?;
    metric_report.skipped.extend(load_failures);
    metric_report.skipped.sort_by(|a, b| a.0.cmp(&b.0));

    let doc = report::to_doc(&metric_report);
    report::write_csv(&args.out.join("report.csv"), &doc).map_err(general)?;
    report::write_json(&args.out.join("report.json"), &doc).map_err(general)?;

    let mut manifest = RunManifest::new("eval");
    manifest.inputs = vec![
        args.data.display().to_string(),
        args.fused.display().to_string(),
    ];
    manifest.outputs = vec!["report.csv".into(), "report.json".into()];
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out).map_err(general)?;

    if !metric_report.skipped.is_empty() {
        let mut msg = String::from("skipped pairs:");
        for (id, reason) in &metric_report.skipped {
            let _ = write!(msg, " {id} ({reason})");
        }
        return Err(CmdError::new(EXIT_FAILURES, msg));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// structure-map
// ---------------------------------------------------------------------------

pub struct StructureMapArgs {
    pub image: PathBuf,
    pub out: PathBuf,
    pub levels: usize,
    pub polarity: Polarity,
}

/// Exports the binary structure pyramid of one image, one PNG per level
/// (0/255).
pub fn cmd_structure_map(args: &StructureMapArgs) -> CmdResult {
    let started = Instant::now();
    let plane = dataset::load_gray_plane(&args.image).map_err(general)?;
    let pyramid = structure_pyramid_gt(&plane, args.levels, args.polarity).map_err(general)?;
    ensure_dir(&args.out)?;
    let mut outputs = Vec::new();
    for (k, level) in pyramid.levels().iter().enumerate() {
        let name = format!("level{}.png", k + 1);
        dataset::save_gray_png(&args.out.join(&name), level).map_err(general)?;
        outputs.push(name);
    }
    let mut manifest = RunManifest::new("structure-map");
    manifest.config = serde_json::json!({
        "levels": args.levels,
        "polarity": args.polarity,
    });
    manifest.inputs = vec![args.image.display().to_string()];
    manifest.outputs = outputs;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out).map_err(general)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train / pretrain
// ---------------------------------------------------------------------------

/// CLI-level overrides; they win over both the config file and environment
/// variables.
#[derive(Default, Clone, Debug)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub epochs_pretrain: Option<usize>,
    pub crop: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub base_channels: Option<usize>,
    pub n_levels: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub sfe_enabled: Option<bool>,
    pub spf_enabled: Option<bool>,
    pub checkpoint_interval: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($src:ident, $dst:ident) => {
                if let Some(v) = self.$src {
                    cfg.$dst = v;
                }
            };
        }
        set!(epochs, epochs_main);
        set!(epochs_pretrain, epochs_pretrain);
        set!(crop, crop);
        set!(lr, lr_init);
        set!(batch_size, batch_size);
        set!(base_channels, base_channels);
        set!(n_levels, n_levels);
        set!(alpha, alpha);
        set!(epsilon, epsilon);
        set!(sfe_enabled, sfe_enabled);
        set!(spf_enabled, spf_enabled);
        set!(checkpoint_interval, checkpoint_interval);
    }
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub overrides: TrainOverrides,
    pub init_from: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub jobs: usize,
    pub seed: Option<u64>,
    /// Use a fixed run directory instead of the timestamped default.
    pub run_dir: Option<PathBuf>,
}

/// Effective config after file, environment and CLI override layering.
pub fn effective_config(
    config: Option<&Path>,
    overrides: &TrainOverrides,
    seed: Option<u64>,
) -> Result<TrainConfig, CmdError> {
    let mut cfg = match config {
        Some(path) => trainer::load_config(path).map_err(general)?,
        None => TrainConfig::desk(),
    };
    cfg.apply_env().map_err(general)?;
    overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(general)?;
    Ok(cfg)
}

fn run_dir_for(args: &TrainArgs, cfg: &TrainConfig) -> PathBuf {
    if let Some(dir) = &args.run_dir {
        return dir.clone();
    }
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S%.3f");
    let mut dir = args.out.join(format!("run-{stamp}-seed{}", cfg.seed));
    let mut n = 1;
    while dir.exists() {
        dir = args.out.join(format!("run-{stamp}-seed{}-{n}", cfg.seed));
        n += 1;
    }
    dir
}

fn run_training(args: &TrainArgs, pretrain: bool) -> CmdResult {
    let started = Instant::now();
    let cfg = effective_config(args.config.as_deref(), &args.overrides, args.seed)?;
    let split = discover(&args.data)?;
    let data = split.load_all().map_err(general)?;
    let run_dir = run_dir_for(args, &cfg);
    ensure_dir(&run_dir)?;
    let opts = RunOptions {
        out_dir: run_dir.clone(),
        jobs: args.jobs,
    };
    let artifacts = if pretrain {
        trainer::pretrain_sfe(&cfg, &data, &opts).map_err(general)?
    } else {
        trainer::train_fusion(
            &cfg,
            &data,
            &opts,
            args.init_from.as_deref(),
            args.resume.as_deref(),
        )
        .map_err(general)?
    };

    let mut manifest = RunManifest::new(if pretrain { "pretrain" } else { "train" });
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null);
    manifest.inputs = vec![args.data.display().to_string()];
    manifest.outputs = vec![
        artifacts
            .final_checkpoint
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        "losses.csv".into(),
    ];
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&run_dir).map_err(general)?;

    let l = artifacts.final_losses;
    println!("run_dir: {}", run_dir.display());
    println!("checkpoint: {}", artifacts.final_checkpoint.display());
    println!(
        "steps: {} final: total={:.6} rec={:.6} ssim={:.6} smooth={:.6} grad={:.6}",
        artifacts.steps, l.total, l.rec, l.ssim, l.smooth, l.grad
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    run_training(args, false)
}

pub fn cmd_pretrain(args: &TrainArgs) -> CmdResult {
    run_training(args, true)
}
