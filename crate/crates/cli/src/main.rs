//! `nvs`: dataset generation, training, rendering and evaluation.

mod data;
mod evalcmd;
mod render;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Validation failures (bad flags, malformed inputs) exit 2; runtime
/// failures (io, NaN aborts) exit 1. Both print one `nvs: error:` line.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(msg.into())
    }
}

impl From<nvs_core::error::DataError> for CliError {
    fn from(e: nvs_core::error::DataError) -> CliError {
        match e {
            nvs_core::error::DataError::Config(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<nvs_core::error::GeometryError> for CliError {
    fn from(e: nvs_core::error::GeometryError) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

impl From<nvs_core::error::ModelError> for CliError {
    fn from(e: nvs_core::error::ModelError) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "nvs", about = "single-image novel view synthesis harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired dataset with ground-truth depth.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// comma-separated subset of tiny,small,medium,large
        #[arg(long, default_value = "small,medium,large")]
        bins: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Train the depth network on photometric reprojection.
    TrainDepth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the view-synthesis network (generator and discriminators).
    TrainView {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth_ckpt: Option<PathBuf>,
        /// use dataset ground-truth depth instead of a depth checkpoint
        #[arg(long, default_value_t = false)]
        use_gt_depth: bool,
        /// resume parameter values from an earlier checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one novel view from an image, a depth source and a pose.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// reference depth map (PFM); required unless --depth-ckpt is given
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        depth_ckpt: Option<PathBuf>,
        /// 12 comma-separated floats: rotation row-major, then translation
        #[arg(long)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate PSNR-all / PSNR-vis per split over a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit norm-ratio histograms of the two renderer features per split.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<nvs_core::config::RunConfig, CliError> {
    match path {
        None => Ok(nvs_core::config::RunConfig::default()),
        Some(p) => nvs_core::config::RunConfig::load(p).map_err(|e| match e {
            nvs_core::error::DataError::Io(io) => {
                CliError::Validation(format!("--config {}: {io}", p.display()))
            }
            other => CliError::Validation(other.to_string()),
        }),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenData { out, count, bins, seed, image_size } => {
            data::cmd_gen_data(&out, count, &bins, seed, image_size)
        }
        Cmd::TrainDepth { config, data, out } => {
            let cfg = load_config(&config)?;
            train::cmd_train_depth(&cfg, &data, &out)
        }
        Cmd::TrainView { config, data, out, depth_ckpt, use_gt_depth, resume } => {
            let cfg = load_config(&config)?;
            if !use_gt_depth && depth_ckpt.is_none() {
                return Err(CliError::validation(
                    "--depth-ckpt is required unless --use-gt-depth is set",
                ));
            }
            train::cmd_train_view(
                &cfg,
                &data,
                &out,
                depth_ckpt.as_deref(),
                use_gt_depth,
                resume.as_deref(),
            )
        }
        Cmd::Render { ckpt, config, image, depth, depth_ckpt, pose, out } => {
            let cfg = load_config(&config)?;
            if depth.is_none() && depth_ckpt.is_none() {
                return Err(CliError::validation("--depth or --depth-ckpt is required"));
            }
            render::cmd_render(
                &cfg,
                &ckpt,
                &image,
                depth.as_deref(),
                depth_ckpt.as_deref(),
                &pose,
                &out,
            )
        }
        Cmd::Eval { ckpt, config, data, out } => {
            let cfg = load_config(&config)?;
            evalcmd::cmd_eval(&cfg, &ckpt, &data, &out)
        }
        Cmd::Analyze { ckpt, config, data, out } => {
            let cfg = load_config(&config)?;
            evalcmd::cmd_analyze(&cfg, &ckpt, &data, &out)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("NVS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("nvs: error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("nvs: error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
