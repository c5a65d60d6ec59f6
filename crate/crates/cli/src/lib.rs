//! The `tsm` command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a check failed.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tsm_core::net::Placement;

pub use commands::shift_check;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Runtime = 1,
    Usage = 2,
    CheckFailed = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Failure of a command, before it is mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<tsm_core::Error> for CliError {
    fn from(e: tsm_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tsm", version, about = "Temporal shift engine: checks, inference, benchmarks and a toy training run")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    None,
    Inplace,
    Residual,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::None => Placement::None,
            PlacementArg::Inplace => Placement::InPlace,
            PlacementArg::Residual => Placement::Residual,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Randomized property suite for the shift kernels.
    ShiftCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        cases: u64,
    },
    /// Whole-clip inference; writes `logits.tsmt` (N, T, K) and
    /// `consensus.tsmt` (N, K) into `--out`.
    InferOffline {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Tensor file with axes (N, T, C, H, W) or (T, C, H, W).
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-by-frame streaming inference over `frame_00000.tsmt`,
    /// `frame_00001.tsmt`, ...; same outputs as `infer-offline`.
    InferOnline {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Directory of frame tensors with axes (N, C, H, W) or (C, H, W).
        #[arg(long)]
        frames_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stream a bi-directional spec by dropping its backward shifts.
        #[arg(long)]
        convert_bidirectional: bool,
    },
    /// Times the shift at several channel fractions against a plain copy.
    BenchShift {
        /// Clip shape as NxCxTxHxW.
        #[arg(long, default_value = "1x64x8x56x56")]
        shape: String,
        /// Comma-separated fractions of channels shifted, e.g. `0,1/8,1`.
        #[arg(long, default_value = "0,1/8,1/4,1/2,1")]
        fractions: String,
        /// Timed repetitions, at least 20.
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(20..))]
        reps: u64,
        /// Untimed passes before timing, at least 3.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(3..))]
        warmup: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pin the benchmark thread to its current CPU.
        #[arg(long)]
        pin: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Times a network against its shift-free form.
    BenchNet {
        #[arg(long)]
        spec: PathBuf,
        /// Timed repetitions, at least 20.
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(20..))]
        reps: u64,
        /// Untimed passes before timing, at least 3.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(3..))]
        warmup: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        pin: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Writes a synthetic direction dataset: `clip_00000.tsmt`, ... and
    /// `labels.csv`.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Trains the demo network on the synthetic direction task.
    TrainToy {
        /// JSON training config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = PlacementArg::Residual)]
        placement: PlacementArg,
        #[arg(long)]
        out_weights: PathBuf,
        #[arg(long)]
        metrics_csv: PathBuf,
        /// Also write the trained network's spec.
        #[arg(long)]
        out_spec: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns its
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                Exit::Usage.code()
            } else {
                let _ = write!(out, "{text}");
                Exit::Success.code()
            };
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(exit) => exit.code(),
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "usage error: {msg}");
            Exit::Usage.code()
        }
        Err(CliError::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            Exit::Runtime.code()
        }
    }
}
