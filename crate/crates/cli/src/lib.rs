//! Command-line front end for the pointmap toolkit.
//!
//! Failures print one line `pmap-error: <category>: <message>` to stderr and
//! exit with the category's code: usage 2, parse 3, io 4, solver 5.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pointmap::io::IoError;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "pmap", version, about = "Pointmap reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene and write ground truth plus predicted pairs.
    Gen {
        /// Scene description (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise model (JSON); noiseless when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        /// Overrides the seed stored in the scene description.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mutual nearest-neighbor matches between two pointmaps in one frame.
    Match {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the focal length of a pointmap expressed in its own camera frame.
    Focal {
        view: PathBuf,
        /// Record to read from a multi-record file.
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
    /// Relative pose of camera 2 with respect to camera 1, as JSON.
    Relpose {
        pair12: PathBuf,
        pair21: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Procrustes)]
        method: MethodArg,
        /// Reprojection threshold in pixels for the PnP path.
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Globally align every `pair_<n>_<m>.pmap` in a directory.
    Align {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Pinhole)]
        mode: ModeArg,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace as `iteration,loss` CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Minimum mean confidence for a pair to enter the graph.
        #[arg(long, default_value_t = 1.0)]
        keep_threshold: f64,
        /// Pixels below this confidence are left out of the residuals.
        #[arg(long, default_value_t = 1.5)]
        min_conf: f64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Directory for per-view pointmaps and, in pinhole mode, poses.json.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Depth metrics of one pointmap's z channel against another's, as JSON.
    EvalDepth {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = NormalizeArg::Median)]
        normalize: NormalizeArg,
        #[arg(long, default_value_t = 1.03)]
        tau: f64,
    },
    /// Relative pose metrics over all view pairs, as JSON.
    EvalPose {
        gt: PathBuf,
        pred: PathBuf,
        /// Accuracy thresholds in degrees.
        #[arg(long, value_delimiter = ',', default_values_t = [15.0, 30.0])]
        thresholds: Vec<f64>,
    },
    /// Write the valid, confident points of a pointmap as PLY.
    ExportPly {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        min_conf: f64,
        #[arg(long)]
        binary: bool,
        #[arg(long, default_value_t = 0)]
        record: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Procrustes,
    Pnp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Free,
    Pinhole,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormalizeArg {
    Median,
    None,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    File(#[from] IoError),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::File(IoError::Io { .. }) => "io",
            Self::File(_) => "parse",
            Self::Solver(_) => "solver",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.category() {
            "usage" => 2,
            "parse" => 3,
            "io" => 4,
            _ => 5,
        }
    }
}

/// Library failures outside file handling.
fn solver(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn fail(err: &CliError, stderr: &mut dyn Write) -> u8 {
    let message = err.to_string().replace('\n', " ");
    // Nothing useful remains to be done if stderr itself is gone.
    let _ = writeln!(stderr, "pmap-error: {}: {}", err.category(), message.trim());
    err.exit_code()
}

/// Parses `args` (program name first) and runs one command; returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return fail(&CliError::Usage(first.trim_start_matches("error: ").to_owned()), stderr);
        }
    };
    match commands::run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => fail(&e, stderr),
    }
}
