use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use structfuse_cli::commands::{
    self, EvalArgs, FuseArgs, StructureMapArgs, TrainArgs, TrainOverrides,
};
use structfuse_core::structmap::Polarity;

#[derive(Parser)]
#[command(
    name = "structfuse",
    version,
    about = "Structure-preserving infrared/visible image fusion: train, fuse and evaluate"
)]
struct Cli {
    /// Training config file (JSON). Defaults to the built-in desk profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (wins over config file and environment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-pair work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PolarityArg {
    /// 1 marks pixels at or above the mean gradient (edges).
    EdgePositive,
    /// The complementary printed convention: 1 where grad - mean <= 0.
    PaperLiteral,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::EdgePositive => Polarity::EdgePositive,
            PolarityArg::PaperLiteral => Polarity::PaperLiteral,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fuse every pair in a dataset with a trained checkpoint.
    Fuse {
        /// Checkpoint archive to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root containing ir/ and vi/ subdirectories.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score fused images against their sources (MI, SF, AG, VIF, Qabf, SSIM).
    Eval {
        /// Dataset root containing ir/ and vi/ subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Directory of fused images named <pair_id>.png.
        #[arg(long)]
        fused: PathBuf,
    },
    /// Train the full fusion objective.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Warm-start parameters from a checkpoint (fresh optimizer).
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Resume an interrupted run exactly (parameters + optimizer + step).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Fixed run directory (default: timestamp+seed under --out).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
    /// Pretrain the structural feature extractor (reconstruction loss only).
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
    /// Export the binary structure pyramid of one image as PNGs.
    StructureMap {
        #[arg(long)]
        image: PathBuf,
        /// Pyramid depth.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = PolarityArg::EdgePositive)]
        polarity: PolarityArg,
    },
}

#[derive(clap::Args, Clone, Default)]
struct OverrideFlags {
    /// Override epochs_main.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override epochs_pretrain.
    #[arg(long)]
    epochs_pretrain: Option<usize>,
    /// Override crop size.
    #[arg(long)]
    crop: Option<usize>,
    /// Override initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override encoder base channel width.
    #[arg(long)]
    base_channels: Option<usize>,
    /// Override pyramid depth.
    #[arg(long)]
    n_levels: Option<usize>,
    /// Override the reconstruction weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the Charbonnier constant.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Toggle the structure self-supervision path.
    #[arg(long)]
    sfe_enabled: Option<bool>,
    /// Toggle the structure-preserving merge.
    #[arg(long)]
    spf_enabled: Option<bool>,
    /// Override steps between checkpoints.
    #[arg(long)]
    checkpoint_interval: Option<usize>,
}

impl From<OverrideFlags> for TrainOverrides {
    fn from(f: OverrideFlags) -> Self {
        TrainOverrides {
            epochs: f.epochs,
            epochs_pretrain: f.epochs_pretrain,
            crop: f.crop,
            lr: f.lr,
            batch_size: f.batch_size,
            base_channels: f.base_channels,
            n_levels: f.n_levels,
            alpha: f.alpha,
            epsilon: f.epsilon,
            sfe_enabled: f.sfe_enabled,
            spf_enabled: f.spf_enabled,
            checkpoint_interval: f.checkpoint_interval,
        }
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf, commands::CmdError> {
    out.ok_or_else(|| {
        commands::CmdError::new(commands::EXIT_USAGE, "--out <DIR> is required for this command")
    })
}

fn dispatch(cli: Cli) -> commands::CmdResult {
    match cli.command {
        Command::Fuse { checkpoint, data } => commands::cmd_fuse(&FuseArgs {
            checkpoint,
            data,
            out: require_out(cli.out)?,
            jobs: cli.jobs,
            seed: cli.seed,
        }),
        Command::Eval { data, fused } => commands::cmd_eval(&EvalArgs {
            data,
            fused,
            out: require_out(cli.out)?,
            jobs: cli.jobs,
        }),
        Command::Train {
            data,
            init_from,
            resume,
            run_dir,
            overrides,
        } => commands::cmd_train(&TrainArgs {
            config: cli.config,
            data,
            out: require_out(cli.out)?,
            overrides: overrides.into(),
            init_from,
            resume,
            jobs: cli.jobs,
            seed: cli.seed,
            run_dir,
        }),
        Command::Pretrain {
            data,
            run_dir,
            overrides,
        } => commands::cmd_pretrain(&TrainArgs {
            config: cli.config,
            data,
            out: require_out(cli.out)?,
            overrides: overrides.into(),
            init_from: None,
            resume: None,
            jobs: cli.jobs,
            seed: cli.seed,
            run_dir,
        }),
        Command::StructureMap {
            image,
            levels,
            polarity,
        } => commands::cmd_structure_map(&StructureMapArgs {
            image,
            out: require_out(cli.out)?,
            levels,
            polarity: polarity.into(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(commands::EXIT_USAGE as u8)
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("structfuse: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
