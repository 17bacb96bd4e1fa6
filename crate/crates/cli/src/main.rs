/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use porenet::ErrorKind;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "porenet", version, about = "GNN-embedded pore network model")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Worker threads for sample-level parallelism (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file whose keys mirror the flags; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress the effective-config block and progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic networks with target permeabilities.
    Gen(commands::GenFlags),
    /// Train the embedded or baseline model.
    Train(commands::TrainFlags),
    /// Evaluate a model on a dataset.
    Eval(commands::EvalFlags),
    /// Compare adjoint and finite-difference gradients on one network.
    Gradcheck(commands::GradcheckFlags),
    /// Feature sensitivity of predicted permeability.
    Sens(commands::SensFlags),
    /// Predict permeability of one network.
    Predict(commands::PredictFlags),
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Numeric,
            message: message.into(),
        }
    }

    fn code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Numeric => 4,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            ErrorKind::Usage => "usage",
            ErrorKind::Validation => "validation",
            ErrorKind::Numeric => "numeric",
        }
    }
}

impl From<porenet::Error> for CliError {
    fn from(e: porenet::Error) -> Self {
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn report(err: &CliError) -> ExitCode {
    let obj = json!({
        "error": {
            "kind": err.kind_name(),
            "code": err.code(),
            "message": err.message,
        }
    });
    eprintln!("{obj}");
    ExitCode::from(err.code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(
                e.kind(),
                K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(2)
                } else {
                    ExitCode::SUCCESS
                };
            }
            let _ = e.print();
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default();
            return report(&CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    let result = commands::run_with_pool(&cli.global, |file| match &cli.command {
        Command::Gen(f) => commands::gen(&cli.global, file, f),
        Command::Train(f) => commands::train(&cli.global, file, f),
        Command::Eval(f) => commands::eval(&cli.global, file, f),
        Command::Gradcheck(f) => commands::gradcheck(&cli.global, file, f),
        Command::Sens(f) => commands::sens(&cli.global, file, f),
        Command::Predict(f) => commands::predict(&cli.global, file, f),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
