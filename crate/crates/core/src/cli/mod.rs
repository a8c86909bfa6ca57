//! Command-line front end: configuration, file formats and the five
//! commands.

pub mod commands;
pub mod config;
pub mod formats;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::decode::{DEFAULT_BEAM_WIDTH, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};

pub use commands::{ablate, prepare, AblationRun, AblationTable, CaptionArgs, Prepared, ARMS};
pub use config::RunConfig;
pub use formats::Checkpoint;

#[derive(Debug, Parser)]
#[command(name = "guidecap", version, about = "Train, decode and evaluate guided attention captioning models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint and report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Caption every record of a dataset.
    Caption(CaptionCmd),
    /// Score a caption file against reference captions.
    Evaluate {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Train the input-zeroing arms and the optional λ sweep.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CaptionCmd {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, required_unless_present = "ensemble", conflicts_with = "ensemble")]
    checkpoint: Option<PathBuf>,
    /// Average the predictions of several checkpoints.
    #[arg(long, num_args = 1..)]
    ensemble: Vec<PathBuf>,
    #[arg(long, conflicts_with = "beam")]
    greedy: bool,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    beam: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Attribute predictor for checkpoints trained on predicted attributes.
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out_file: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    match out_file {
        Some(p) => formats::write_text(p, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Train { config } => {
            let text = commands::cmd_train(&RunConfig::load(&config)?)?;
            emit(&text, None, stdout)?;
        }
        Command::Caption(c) => {
            let args = CaptionArgs {
                dataset: c.dataset,
                checkpoints: c.checkpoint.into_iter().chain(c.ensemble).collect(),
                beam: (!c.greedy).then_some(c.beam),
                max_len: c.max_len,
                predictor: c.predictor,
            };
            emit(&commands::cmd_caption(&args)?, c.out.as_ref(), stdout)?;
        }
        Command::Evaluate {
            captions,
            references,
            out,
        } => emit(&commands::cmd_evaluate(&captions, &references)?, out.as_ref(), stdout)?,
        Command::Gradcheck { config, tolerance } => {
            let (passed, text) = commands::cmd_gradcheck(&RunConfig::load(&config)?, tolerance)?;
            emit(&text, None, stdout)?;
            if !passed {
                return Ok(3);
            }
        }
        Command::Ablate { config } => {
            let text = commands::cmd_ablate(&RunConfig::load(&config)?)?;
            emit(&text, None, stdout)?;
        }
    }
    Ok(0)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage or configuration error, 2 data
/// error, 3 numerical failure.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
