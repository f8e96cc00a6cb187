use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbeval_cli::{render_report, rerender, run, CliError, Command, Format, LoadedConfig, Outcome};

/// Review feedback labeling, training data forging and evaluation.
#[derive(Debug, Parser)]
#[command(name = "fbeval", version)]
struct Cli {
    /// JSON configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set sampling.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Build the dataset store and its splits.
    Ingest,
    /// Label review threads into feedback units.
    Parse,
    /// Write supervised fine-tuning data.
    ForgeSft,
    /// Corrupt, verify and pair feedback into preference data.
    ForgeDpo,
    /// Calibrate cosine prefilter thresholds from annotated pairs.
    Calibrate,
    /// Score model feedback against the human consensus.
    ConsensusEval,
    /// Estimate the success rate of model feedback.
    SuccessEval,
    /// Render the report of a run.
    Report {
        /// Existing run directory; defaults to the one for the configuration.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
}

fn execute(cli: &Cli) -> Result<(Outcome, Option<Format>), CliError> {
    if let Sub::Report {
        run_dir: Some(dir),
        format,
    } = &cli.command
    {
        return Ok((rerender(dir)?, Some(*format)));
    }
    let cfg = LoadedConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let (command, format) = match &cli.command {
        Sub::Ingest => (Command::Ingest, None),
        Sub::Parse => (Command::Parse, None),
        Sub::ForgeSft => (Command::ForgeSft, None),
        Sub::ForgeDpo => (Command::ForgeDpo, None),
        Sub::Calibrate => (Command::Calibrate, None),
        Sub::ConsensusEval => (Command::ConsensusEval, None),
        Sub::SuccessEval => (Command::SuccessEval, None),
        Sub::Report { format, .. } => (Command::Report, Some(*format)),
    };
    Ok((run(command, &cfg)?, format))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((outcome, Some(format))) => {
            print!("{}", render_report(&outcome.report, format));
            ExitCode::SUCCESS
        }
        Ok((outcome, None)) => {
            log::info!("report written under {}", outcome.run_dir.display());
            println!("{}", outcome.run_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
