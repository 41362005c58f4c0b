//! Command-line driver for the mindmesh pipeline.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration or usage error,
//! 3 data error.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math in numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity, clippy::cloned_ref_to_slice_refs)]

pub mod commands;
pub mod config;
mod logging;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{error, LevelFilter};

pub use config::RunConfig;
pub use logging::LOG_FILE;

/// Thread cap for the worker pool; unset means one per core.
pub const THREADS_ENV: &str = "MINDMESH_THREADS";

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<mindmesh::Error> for Failure {
    fn from(e: mindmesh::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mindmesh", version, about = "EEG-to-facial-geometry pipeline: synthesize, preprocess, train, evaluate, infer and render")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Print the complete default run config as JSON and exit.
    #[arg(long)]
    dump_config: bool,

    /// Log level for stderr and run.log: off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info", value_parser = parse_level)]
    log_level: LevelFilter,

    #[command(subcommand)]
    command: Option<Command>,
}

fn parse_level(s: &str) -> Result<LevelFilter, String> {
    s.parse().map_err(|_| format!("unknown log level {s:?}"))
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Run config JSON; omitted fields take their defaults (see `mindmesh --dump-config`). [default: built-in defaults]
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Failure> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic paired EEG / face-geometry dataset.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory. [default: paths.data of the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Band-pass, z-score and window a dataset's EEG into a window archive.
    Preprocess {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory. [default: paths.data of the config]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for windows.eegw and norm.json. [default: paths.run of the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the EEG → position-map model with periodic checkpoints and a loss CSV.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory. [default: paths.data of the config]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of an earlier `preprocess` run to take windows from. [default: preprocess on the fly]
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Output directory. [default: paths.run of the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report per-trial nMAE / nRMSE on the test segments and the holdout trial.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory. [default: paths.data of the config]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model checkpoint. [default: the untrained initialization]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory for metrics.csv and metrics.txt. [default: paths.run of the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode an EEG recording into one position map per video frame.
    Infer {
        #[command(flatten)]
        config: ConfigArg,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw recording in .eegb format.
        #[arg(long)]
        eeg: PathBuf,
        /// Normalization statistics written by `train` or `preprocess`.
        #[arg(long)]
        norm: PathBuf,
        /// Template mesh whose UV chart masks the output maps. [default: no mask]
        #[arg(long)]
        template: Option<PathBuf>,
        /// Video frame rate the maps are aligned to.
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Windows per forward pass.
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Output directory for NNNNN.pmap files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a position-map sequence through mesh-bound Gaussian splats to PNG frames.
    Render {
        #[command(flatten)]
        config: ConfigArg,
        /// Directory of .pmap files.
        #[arg(long)]
        maps: PathBuf,
        /// Template mesh giving topology and UV chart.
        #[arg(long)]
        template: PathBuf,
        /// Trained splats as a JSON array. [default: one grey splat per face]
        #[arg(long)]
        splats: Option<PathBuf>,
        /// Output directory for PNG frames.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every autodiff layer and the shrunk model.
    Gradcheck {
        /// Number of random seeds, starting at 0.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Write the full per-seed report as JSON here. [default: none]
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rigidly align every OBJ in a directory to the first one (by name).
    Align {
        /// Directory of .obj files sharing one topology.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for aligned meshes and transforms.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    // A pool that already exists (repeated in-process runs) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { config, out } => {
            let cfg = config.load()?;
            let out = out.unwrap_or_else(|| cfg.paths.data.clone());
            commands::synth(&cfg, &out)
        }
        Command::Preprocess { config, data, out } => {
            let cfg = config.load()?;
            let data = data.unwrap_or_else(|| cfg.paths.data.clone());
            let out = out.unwrap_or_else(|| cfg.paths.run.clone());
            commands::preprocess(&cfg, &data, &out)
        }
        Command::Train { config, data, windows, out } => {
            let cfg = config.load()?;
            let data = data.unwrap_or_else(|| cfg.paths.data.clone());
            let out = out.unwrap_or_else(|| cfg.paths.run.clone());
            commands::train(&cfg, &data, windows.as_deref(), &out)
        }
        Command::Eval { config, data, checkpoint, out } => {
            let cfg = config.load()?;
            let data = data.unwrap_or_else(|| cfg.paths.data.clone());
            let out = out.unwrap_or_else(|| cfg.paths.run.clone());
            commands::eval(&cfg, &data, checkpoint.as_deref(), &out).map(|_| ())
        }
        Command::Infer { config, checkpoint, eeg, norm, template, fps, batch, out } => {
            let cfg = config.load()?;
            let args = commands::InferArgs {
                checkpoint: &checkpoint,
                eeg: &eeg,
                norm: &norm,
                template: template.as_deref(),
                fps,
                batch,
                out: &out,
            };
            commands::infer(&cfg, &args)
        }
        Command::Render { config, maps, template, splats, out } => {
            let cfg = config.load()?;
            commands::render_frames(&cfg, &maps, &template, splats.as_deref(), &out)
        }
        Command::Gradcheck { seeds, report } => commands::gradcheck(seeds, report.as_deref()),
        Command::Align { input, out } => commands::align(&input, &out),
    }
}

/// Parse `args` (program name first), run one subcommand and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    logging::init(cli.log_level);
    if cli.dump_config {
        print!("{}", RunConfig::default().to_json());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see `mindmesh --help`");
        return 2;
    };
    let result = configure_threads().and_then(|()| dispatch(command));
    log::logger().flush();
    logging::detach_file();
    match result {
        Ok(()) => 0,
        Err(f) => {
            error!("{f}");
            f.exit_code()
        }
    }
}
