use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use klaunch::tuner::Strategy;

mod capture_cmd;
mod config;
mod report_cmd;
mod tune_cmd;
mod wisdom_cmd;

use config::{BackendKind, CliConfig};

/// Capture kernel launches, tune them offline and manage wisdom files.
#[derive(Debug, Parser)]
#[command(name = "klaunch", version)]
pub struct Cli {
    /// Configuration file (default: ./klconfig.json if present)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect or create capture files
    #[command(subcommand)]
    Capture(CaptureCommand),
    /// Tune a captured launch and record the best configuration
    Tune(TuneArgs),
    /// Query, show and merge wisdom files
    #[command(subcommand)]
    Wisdom(WisdomCommand),
    /// Analyses over session and wisdom files, written as CSV
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Subcommand)]
pub enum CaptureCommand {
    /// List capture files in a directory
    Ls {
        /// Directory to list (default: capture directory from env or config, else .)
        dir: Option<PathBuf>,
        /// Print JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Print the contents of a capture file
    Show {
        file: PathBuf,
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic capture for a kernel definition
    Synth {
        /// Kernel definition file (JSON)
        definition: PathBuf,
        /// Arguments in signature order: TYPE:VALUE for scalars (i32:256,
        /// f32:0.5), in:TYPE:COUNT or out:TYPE:COUNT for buffers
        #[arg(long = "arg", value_name = "SPEC", required = true)]
        args: Vec<String>,
        /// Output file
        #[arg(short, long)]
        output: PathBuf,
        /// Fixed metadata timestamp (default: now)
        #[arg(long)]
        timestamp: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Capture file to replay
    capture: PathBuf,
    /// Search strategy: exhaustive, random or surrogate
    #[arg(long, default_value = "surrogate")]
    strategy: Strategy,
    /// Wall-clock budget in seconds (default: 900, or the config file's)
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Maximum number of evaluations
    #[arg(long)]
    max_evals: Option<u64>,
    /// Executor backend
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Search seed
    #[arg(long)]
    seed: Option<u64>,
    /// Wisdom directory to append the result to
    #[arg(long, value_name = "DIR")]
    wisdom: Option<PathBuf>,
    /// Device name recorded in the session and wisdom
    #[arg(long, default_value = "sim")]
    device: String,
    /// Device architecture
    #[arg(long, default_value = "sim")]
    arch: String,
    /// Session log path (default: <capture stem>.klsession)
    #[arg(long, value_name = "PATH")]
    session_out: Option<PathBuf>,
    /// Simulated backend: multiplicative noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Simulated backend: landscape seed
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
    /// Subprocess backend: compiler command template
    #[arg(long, value_name = "TEMPLATE")]
    compile_cmd: Option<String>,
    /// Subprocess backend: benchmark command template
    #[arg(long, value_name = "TEMPLATE")]
    bench_cmd: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum WisdomCommand {
    /// Print the configuration selected for a device and problem size
    Best {
        file: PathBuf,
        /// Device name
        #[arg(long)]
        device: String,
        /// Device architecture
        #[arg(long)]
        arch: String,
        /// Problem size, e.g. 256,256,256
        #[arg(long)]
        problem: String,
        /// Kernel definition, needed when the file does not carry one
        #[arg(long, value_name = "PATH")]
        kernel: Option<PathBuf>,
        /// Print JSON
        #[arg(long)]
        json: bool,
    },
    /// Print the records of a wisdom file
    Show {
        file: PathBuf,
        /// Print the canonical file contents
        #[arg(long)]
        json: bool,
    },
    /// Merge wisdom files into OUTPUT, keeping the best record per device and problem
    Merge {
        output: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Fraction-of-optimum histogram of a session
    Histogram {
        session: PathBuf,
        /// Number of bins over [0, 1]
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Extra marker: LABEL=JSON configuration
        #[arg(long = "reference", value_name = "LABEL=CONFIG")]
        references: Vec<String>,
        /// Output file (default: stdout)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Cross-scenario efficiency matrix over sessions of one kernel
    Matrix {
        #[arg(required = true)]
        sessions: Vec<PathBuf>,
        /// Output file (default: stdout)
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Performance portability per row of a matrix CSV
    Ppm {
        /// CSV with columns row,column,fraction
        matrix: PathBuf,
        /// Write CSV (label,best,worst,ppm) instead of a table
        #[arg(long)]
        csv: bool,
        /// Print JSON
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Capture(cmd) => capture_cmd::run(cmd, &config),
        Command::Tune(args) => tune_cmd::run(args, &config),
        Command::Wisdom(cmd) => wisdom_cmd::run(cmd),
        Command::Report(cmd) => report_cmd::run(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
