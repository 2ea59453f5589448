//! Two-stage training harness: structure pretraining (reconstruction loss
//! only) and joint fusion training, with deterministic seeding,
//! checkpointing and exact resumability.
//!
//! Determinism contract: the per-epoch shuffle and per-pair crop windows
//! are derived from (seed, epoch) and (seed, step, pair index) rather than
//! from a running RNG, so a run resumed from step k replays steps k..N
//! exactly. Batch gradients are reduced in pair order, which keeps the
//! f64 sums identical regardless of worker scheduling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use structfuse_core::autodiff::Tape;
use structfuse_core::imagedata::ImagePair;
use structfuse_core::losses::{self, LossBreakdown};
use structfuse_core::network::{MergeMode, Model, ModelConfig};
use structfuse_core::optim::{cosine_lr, AdamParams, AdamState};
use structfuse_core::plane::Plane;
use structfuse_core::structmap::{structure_pyramid_gt, Polarity};
use structfuse_core::tensor::Tensor;

use crate::checkpoint::{self, Progress};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("crop size {crop} exceeds pair {pair} ({h}x{w})")]
    CropTooLarge {
        crop: usize,
        pair: String,
        h: usize,
        w: usize,
    },
    #[error("loss became non-finite at step {step}; last good checkpoint: {last_good}")]
    NonFiniteLoss { step: u64, last_good: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Core(#[from] structfuse_core::Error),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Cosine,
}

/// Full training configuration; the JSON config file mirrors these field
/// names exactly, and unknown keys are rejected by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs_main: usize,
    pub epochs_pretrain: usize,
    pub crop: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub n_levels: usize,
    pub base_channels: usize,
    pub residual_blocks_per_level: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sfe_enabled: bool,
    pub spf_enabled: bool,
    pub merge: MergeMode,
    pub polarity: Polarity,
    pub schedule: Schedule,
    /// Steps between periodic checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    /// Reference profile: the published training protocol.
    fn default() -> Self {
        Self {
            lr_init: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epochs_main: 300,
            epochs_pretrain: 50,
            crop: 256,
            alpha: 0.01,
            epsilon: 1.0,
            n_levels: 3,
            base_channels: 16,
            residual_blocks_per_level: 2,
            batch_size: 8,
            seed: 0,
            sfe_enabled: true,
            spf_enabled: true,
            merge: MergeMode::Sum,
            polarity: Polarity::EdgePositive,
            schedule: Schedule::Cosine,
            checkpoint_interval: 50,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: CPU-feasible in minutes on a handful of pairs.
    /// This is what the CLI uses when no config file is given.
    pub fn desk() -> Self {
        Self {
            crop: 64,
            batch_size: 4,
            base_channels: 8,
            lr_init: 2e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            (self.lr_init > 0.0, "lr_init"),
            (self.crop > 0, "crop"),
            (self.epochs_main > 0, "epochs_main"),
            (self.epochs_pretrain > 0, "epochs_pretrain"),
            (self.batch_size > 0, "batch_size"),
            (self.n_levels >= 1, "n_levels"),
            (self.base_channels >= 1, "base_channels"),
            (self.epsilon >= 0.0, "epsilon"),
            (self.alpha >= 0.0, "alpha"),
            ((0.0..1.0).contains(&self.beta1), "beta1"),
            ((0.0..1.0).contains(&self.beta2), "beta2"),
            (self.checkpoint_interval > 0, "checkpoint_interval"),
        ];
        for (ok, what) in positive {
            if !ok {
                return Err(TrainError::Config(format!("{what} out of range")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_levels: self.n_levels,
            base_channels: self.base_channels,
            residual_blocks_per_level: self.residual_blocks_per_level,
            seed: self.seed,
            polarity: self.polarity,
            merge: self.merge,
        }
    }

    pub fn adam_params(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamParams::default()
        }
    }

    /// Applies `STRUCTFUSE_*` environment overrides (between file values
    /// and CLI flags in precedence).
    pub fn apply_env(&mut self) -> Result<Vec<String>, TrainError> {
        let mut applied = Vec::new();
        macro_rules! env_override {
            ($field:ident, $parse:expr) => {
                let var = concat!("STRUCTFUSE_", stringify!($field)).to_uppercase();
                if let Ok(raw) = std::env::var(&var) {
                    self.$field = $parse(&raw).map_err(|e: String| {
                        TrainError::Config(format!("bad value for {var}: {e}"))
                    })?;
                    applied.push(var);
                }
            };
        }
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| e.to_string());
        let parse_u64 = |s: &str| s.parse::<u64>().map_err(|e| e.to_string());
        let parse_bool = |s: &str| s.parse::<bool>().map_err(|e| e.to_string());
        env_override!(lr_init, parse_f64);
        env_override!(beta1, parse_f64);
        env_override!(beta2, parse_f64);
        env_override!(epochs_main, parse_usize);
        env_override!(epochs_pretrain, parse_usize);
        env_override!(crop, parse_usize);
        env_override!(alpha, parse_f64);
        env_override!(epsilon, parse_f64);
        env_override!(n_levels, parse_usize);
        env_override!(base_channels, parse_usize);
        env_override!(residual_blocks_per_level, parse_usize);
        env_override!(batch_size, parse_usize);
        env_override!(seed, parse_u64);
        env_override!(sfe_enabled, parse_bool);
        env_override!(spf_enabled, parse_bool);
        env_override!(checkpoint_interval, parse_usize);
        Ok(applied)
    }
}

/// Loads a config file, rejecting unknown keys by name.
pub fn load_config(path: &Path) -> Result<TrainConfig, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Which objective a run optimizes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Encoder + structure heads under the reconstruction loss only.
    Pretrain,
    /// The full fusion objective.
    Fusion,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Fusion => "fusion",
        }
    }
}

/// Artifacts of a completed run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub steps: u64,
    pub final_losses: LossBreakdown,
}

// salt separating the epoch-shuffle stream from per-pair crop streams
const SHUFFLE_SALT: u64 = u64::MAX;

fn mix_seed(seed: u64, step: u64, salt: u64) -> u64 {
    // splitmix-style mixing keeps the streams decorrelated and lets a
    // resumed run re-derive any step's randomness from scratch
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(step.wrapping_add(1)))
        .wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(salt.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PairStep {
    losses: LossBreakdown,
    grads: Vec<Option<Tensor>>,
}

fn pair_step(
    model: &Model,
    cfg: &TrainConfig,
    phase: Phase,
    pair: &ImagePair,
    crop_seed: u64,
) -> Result<PairStep, TrainError> {
    let cropped;
    let view = if cfg.crop < pair.h() || cfg.crop < pair.w() {
        cropped = pair.random_crop(cfg.crop, crop_seed)?;
        &cropped
    } else {
        pair
    };
    let gt_ir = structure_pyramid_gt(&view.ir_y, cfg.n_levels, cfg.polarity)?;
    let gt_vi = structure_pyramid_gt(&view.vi_y, cfg.n_levels, cfg.polarity)?;
    let mut tape = Tape::new();

    let (root, breakdown_nodes, param_ids) = match phase {
        Phase::Pretrain => {
            let graph = model.build_structure_graph(&mut tape, &view.ir_y, &view.vi_y, true)?;
            let mut preds = graph.soft_ir.clone();
            preds.extend_from_slice(&graph.soft_vi);
            let gts: Vec<&Plane> = gt_ir.levels().iter().chain(gt_vi.levels()).collect();
            let rec = losses::charbonnier_on_tape(&mut tape, &preds, &gts, cfg.epsilon)?;
            (rec, (Some(rec), None, None, None), graph.param_ids)
        }
        Phase::Fusion => {
            let graph = model.build_fusion_graph(
                &mut tape,
                &view.ir_y,
                &view.vi_y,
                &gt_ir,
                &gt_vi,
                cfg.spf_enabled,
                cfg.sfe_enabled,
                true,
            )?;
            let ir_n = tape.leaf_plane(&view.ir_y, false);
            let vi_n = tape.leaf_plane(&view.vi_y, false);
            let rec = if cfg.sfe_enabled {
                let mut preds = graph.soft_ir.clone();
                preds.extend_from_slice(&graph.soft_vi);
                let gts: Vec<&Plane> = gt_ir.levels().iter().chain(gt_vi.levels()).collect();
                Some(losses::charbonnier_on_tape(
                    &mut tape,
                    &preds,
                    &gts,
                    cfg.epsilon,
                )?)
            } else {
                None
            };
            let ssim = losses::ssim_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n)?;
            let smooth = losses::smooth_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n)?;
            let grad = losses::grad_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n)?;
            let total = losses::total_on_tape(&mut tape, rec, ssim, smooth, grad, cfg.alpha)?;
            (
                total,
                (rec, Some(ssim), Some(smooth), Some(grad)),
                graph.param_ids,
            )
        }
    };

    let value = |id: Option<structfuse_core::autodiff::NodeId>| {
        id.map(|n| tape.value(n).item()).unwrap_or(0.0)
    };
    let (rec_n, ssim_n, smooth_n, grad_n) = breakdown_nodes;
    let breakdown = LossBreakdown {
        total: tape.value(root).item(),
        rec: value(rec_n),
        ssim: value(ssim_n),
        smooth: value(smooth_n),
        grad: value(grad_n),
        alpha: match phase {
            Phase::Pretrain => 1.0,
            Phase::Fusion => cfg.alpha,
        },
        epsilon: cfg.epsilon,
    };

    let mut grads = tape.backward(root)?;
    let per_param: Vec<Option<Tensor>> = param_ids.iter().map(|&id| grads.take(id)).collect();
    Ok(PairStep {
        losses: breakdown,
        grads: per_param,
    })
}

fn reduce_batch(mut steps: Vec<PairStep>) -> (LossBreakdown, Vec<Option<Tensor>>) {
    let n = steps.len() as f64;
    let mut grads = steps[0].grads.clone();
    for step in steps.iter().skip(1) {
        for (acc, g) in grads.iter_mut().zip(step.grads.iter()) {
            match (acc.as_mut(), g) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                (None, None) => {}
                _ => unreachable!("batch items built identical graphs"),
            }
        }
    }
    for g in grads.iter_mut().flatten() {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    let mut total = 0.0;
    let mut rec = 0.0;
    let mut ssim = 0.0;
    let mut smooth = 0.0;
    let mut grad = 0.0;
    for s in &steps {
        total += s.losses.total;
        rec += s.losses.rec;
        ssim += s.losses.ssim;
        smooth += s.losses.smooth;
        grad += s.losses.grad;
    }
    let first = steps.remove(0);
    (
        LossBreakdown {
            total: total / n,
            rec: rec / n,
            ssim: ssim / n,
            smooth: smooth / n,
            grad: grad / n,
            ..first.losses
        },
        grads,
    )
}

/// Settings shared by both run entry points.
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
}

/// One deterministic training run. `start` carries (model, adam, step) when
/// resuming; otherwise the model initializes from the config seed.
fn run_loop(
    cfg: &TrainConfig,
    phase: Phase,
    data: &[ImagePair],
    opts: &RunOptions,
    start: Option<(Model, AdamState, u64)>,
    init_model: Option<Model>,
) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for pair in data {
        if cfg.crop > pair.h() || cfg.crop > pair.w() {
            return Err(TrainError::CropTooLarge {
                crop: cfg.crop,
                pair: pair.pair_id.clone(),
                h: pair.h(),
                w: pair.w(),
            });
        }
    }
    let epochs = match phase {
        Phase::Pretrain => cfg.epochs_pretrain,
        Phase::Fusion => cfg.epochs_main,
    };
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * epochs as u64;

    let (mut model, mut adam, start_step) = match start {
        Some((m, a, s)) => (m, a, s),
        None => {
            let model = match init_model {
                Some(m) => m,
                None => Model::init(cfg.model_config())?,
            };
            let adam = AdamState::new(model.params());
            (model, adam, 0)
        }
    };

    fs::create_dir_all(&opts.out_dir).map_err(|source| TrainError::Io {
        path: opts.out_dir.clone(),
        source,
    })?;
    let log_path = opts.out_dir.join("losses.csv");
    let mut log = fs::File::create(&log_path).map_err(|source| TrainError::Io {
        path: log_path.clone(),
        source,
    })?;
    writeln!(log, "step,total,rec,ssim,smooth,grad").map_err(|source| TrainError::Io {
        path: log_path.clone(),
        source,
    })?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| TrainError::Config(e.to_string()))?;

    let mut last_good = String::from("<none>");
    let mut final_losses = None;
    let adam_hp = cfg.adam_params();

    for step in start_step..total_steps {
        let epoch = step / steps_per_epoch;
        let slot = (step % steps_per_epoch) as usize;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch, SHUFFLE_SALT));
        order.shuffle(&mut shuffle_rng);
        let lo = slot * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(data.len());
        let batch: Vec<usize> = order[lo..hi].to_vec();

        let results: Result<Vec<PairStep>, TrainError> = pool.install(|| {
            use rayon::prelude::*;
            batch
                .par_iter()
                .map(|&pair_idx| {
                    pair_step(
                        &model,
                        cfg,
                        phase,
                        &data[pair_idx],
                        mix_seed(cfg.seed, step, pair_idx as u64),
                    )
                })
                .collect()
        });
        let (losses, grads) = reduce_batch(results?);

        if !losses.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                last_good: last_good.clone(),
            });
        }

        let lr = cosine_lr(step, total_steps, cfg.lr_init)?;
        adam.apply(model.params_mut(), &grads, lr, &adam_hp)?;

        writeln!(
            log,
            "{},{},{},{},{},{}",
            step, losses.total, losses.rec, losses.ssim, losses.smooth, losses.grad
        )
        .map_err(|source| TrainError::Io {
            path: log_path.clone(),
            source,
        })?;
        final_losses = Some(losses);

        let done = step + 1;
        if done % cfg.checkpoint_interval as u64 == 0 && done != total_steps {
            let path = opts.out_dir.join(format!("ckpt_step_{done}.sfck"));
            checkpoint::save(
                &path,
                &model,
                cfg.spf_enabled,
                Some(&adam),
                Some(Progress {
                    step: done,
                    total_steps,
                    phase: phase.name(),
                }),
            )?;
            last_good = path.display().to_string();
        }
    }

    let final_path = opts.out_dir.join("ckpt_final.sfck");
    checkpoint::save(
        &final_path,
        &model,
        cfg.spf_enabled,
        Some(&adam),
        Some(Progress {
            step: total_steps,
            total_steps,
            phase: phase.name(),
        }),
    )?;
    Ok(RunArtifacts {
        final_checkpoint: final_path,
        loss_log: log_path,
        steps: total_steps,
        final_losses: final_losses.expect("at least one step"),
    })
}

/// Structure pretraining: optimizes encoders and heads under the
/// reconstruction loss alone. The decoder never enters the graph, so its
/// weights come out byte-identical to initialization.
pub fn pretrain_sfe(
    cfg: &TrainConfig,
    data: &[ImagePair],
    opts: &RunOptions,
) -> Result<RunArtifacts, TrainError> {
    run_loop(cfg, Phase::Pretrain, data, opts, None, None)
}

/// Full fusion training. `init` warm-starts from a checkpoint's parameters
/// (step 0, fresh optimizer); `resume` continues an interrupted run
/// exactly.
pub fn train_fusion(
    cfg: &TrainConfig,
    data: &[ImagePair],
    opts: &RunOptions,
    init: Option<&Path>,
    resume: Option<&Path>,
) -> Result<RunArtifacts, TrainError> {
    if init.is_some() && resume.is_some() {
        return Err(TrainError::Config(
            "--init-from and --resume are mutually exclusive".into(),
        ));
    }
    if let Some(path) = resume {
        let ckpt = checkpoint::load(path)?;
        let step = ckpt.step.unwrap_or(0);
        let (model, adam) = ckpt.into_model_and_adam()?;
        let adam = adam.ok_or_else(|| {
            TrainError::Config("resume checkpoint carries no optimizer state".into())
        })?;
        return run_loop(cfg, Phase::Fusion, data, opts, Some((model, adam, step)), None);
    }
    let init_model = match init {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            let model = ckpt.into_model()?;
            if *model.config() != cfg.model_config() {
                return Err(TrainError::Config(
                    "init checkpoint model config differs from training config".into(),
                ));
            }
            Some(model)
        }
        None => None,
    };
    run_loop(cfg, Phase::Fusion, data, opts, None, init_model)
}
