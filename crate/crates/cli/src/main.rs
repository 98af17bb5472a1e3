//! `afinet` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "afinet",
    version,
    about = "Rotation-insensitive iris recognition experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Replace the VLAD layer by 2×2 max-pooling and a flattened FC layer.
    NoVlad,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain, attach the VLAD layer and train the whole network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// Continue from the state saved in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
        /// Stop after this many epochs; continue later with --resume.
        #[arg(long)]
        max_epochs_this_run: Option<usize>,
    },
    /// Score test pairs under every configured rotation regime.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Method name used in reports; defaults from the model variant.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Write gradient saliency maps of one image under several rotations.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,20,45")]
        angles: Vec<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Merge evaluation reports into one summary table.
    Report {
        /// Directories holding evaluation reports.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Summary CSV; a JSON copy is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
}

impl From<afinet::Error> for CliError {
    fn from(e: afinet::Error) -> Self {
        use afinet::Error as E;
        let code = match &e {
            E::Invalid { .. } => 1,
            E::Io { .. } | E::Parse { .. } | E::Checkpoint { .. } => 2,
            E::NonFinite { .. } | E::Tensor(_) => 3,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out, force } => commands::synth(&config, out, force),
        Command::Train {
            config,
            out,
            ablation,
            resume,
            force,
            max_epochs_this_run,
        } => commands::train(&config, out, ablation, resume, force, max_epochs_this_run),
        Command::Eval {
            config,
            checkpoint,
            out,
            method,
            force,
        } => commands::eval(&config, &checkpoint, out, method, force),
        Command::Saliency {
            checkpoint,
            image,
            class,
            out,
            angles,
            force,
        } => commands::saliency(&checkpoint, &image, class, &out, &angles, force),
        Command::Report { dirs, out } => commands::report(&dirs, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
