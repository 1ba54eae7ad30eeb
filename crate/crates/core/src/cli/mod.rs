//! The `sef` command line: one subcommand per pipeline stage.
//!
//! Every run writes `config.toml` (the resolved training configuration,
//! reusable through `--config`) and `run.json` (subcommand, arguments,
//! seed, thread count) into its output directory. Results are JSON lines.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

/// Default output root when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "SEF_OUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sef", version, about = "Aligned fake generation, expert training, fusion and evaluation")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (default: $SEF_OUT_ROOT/<subcommand>, or runs/<subcommand>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed (default 0, or the config file's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML training configuration; overrides built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an aligned (real, VAE fake, GAN fake, mask) dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 72)]
        size: usize,
        /// Mask-augmentation probability (default 0.5, or 0 with --held-out).
        #[arg(long)]
        aug_prob: Option<f64>,
        /// Use the held-out index range.
        #[arg(long)]
        held_out: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train one single-domain expert.
    TrainExpert {
        /// vae or gan.
        #[arg(long)]
        domain: String,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the mixed-source baseline.
    TrainMixed {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fuse two experts with a gate (stage 2).
    TrainSef {
        #[arg(long)]
        expert_v: PathBuf,
        #[arg(long)]
        expert_s: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Balanced accuracy of a checkpoint on a held-out dataset.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training dataset whose anchors must not appear in the test set.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// blur,crop,jpeg,noise | all | none
        #[arg(long, default_value = "none")]
        perturb: String,
        /// Per-image probability of each perturbation.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        /// Random crop anchor instead of a centered one.
        #[arg(long)]
        random_crop: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate all four paradigms over several seeds.
    ///
    /// Without --config, training starts from the desk-scale preset
    /// (lr 3e-3, 512 stage-1 and 256 stage-2 micro-batches).
    CompareParadigms {
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 400)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 72)]
        canvas: usize,
        /// Seed of the generated train and test sets, shared by all training seeds.
        #[arg(long, default_value_t = 11)]
        data_seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient-conflict probe of mixed training plus the Taylor check.
    ConflictReport {
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// lora_and_head or lora_only.
        #[arg(long, default_value = "lora_and_head")]
        params: String,
        /// Dataset to probe on; generated from the seed when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Steps of the Taylor check; 0 skips it.
        #[arg(long, default_value_t = 50)]
        taylor_steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        eta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Metric profiles of three image directories and radar scores.
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long, default_value_t = crate::metrics::DEFAULT_RADAR_ALPHA)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainExpert { .. } => "train-expert",
            Command::TrainMixed { .. } => "train-mixed",
            Command::TrainSef { .. } => "train-sef",
            Command::Evaluate { .. } => "evaluate",
            Command::CompareParadigms { .. } => "compare-paradigms",
            Command::ConflictReport { .. } => "conflict-report",
            Command::Metrics { .. } => "metrics",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::TrainExpert { common, .. }
            | Command::TrainMixed { common, .. }
            | Command::TrainSef { common, .. }
            | Command::Evaluate { common, .. }
            | Command::CompareParadigms { common, .. }
            | Command::ConflictReport { common, .. }
            | Command::Metrics { common, .. } => common,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to standard error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        // a global pool can only be built once per process; later calls keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    commands::execute(&cli.command, cli.threads)
}

/// Output directory for `command`.
pub fn out_dir(command: &Command) -> PathBuf {
    if let Some(o) = &command.common().out {
        return o.clone();
    }
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command.name())
}
