//! Command-line front end for the regularized LSTM sentiment classifier.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

use config::{Overrides, RunConfig};

/// Exit code for a run that failed while executing.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code for bad usage or configuration.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<lrlstm::Error> for CliError {
    fn from(e: lrlstm::Error) -> Self {
        match e {
            lrlstm::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lrlstm", version, about = "Sentiment classification with linguistically regularized LSTMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and score its best checkpoint on the test split
    Train(CommonArgs),
    /// Score a checkpoint on the test split and its negation/intensity subsets
    Eval(CommonArgs),
    /// Leave-one-out regularizer ablation
    Ablate(CommonArgs),
    /// Sentence counts per split (total, sentiment, negation, intensity)
    Stats(CommonArgs),
    /// Write the negation and intensity subsets of every split as TSV
    Subset(CommonArgs),
    /// Negation curves of each learned negator matrix and negator phrase pairs
    AnalyzeNegation(CommonArgs),
    /// Intensifier phrase pairs and label transition counts
    AnalyzeIntensity(CommonArgs),
    /// Finite-difference gradient check on a built-in instance
    Gradcheck(GradcheckArgs),
    /// Merge the lexicon sources and write the result as TSV
    ExportLexicon(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Configuration file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Encoder variant
    #[arg(long, value_name = "lstm|bilstm")]
    model: Option<String>,
    /// Turn a regularizer off (repeatable)
    #[arg(long, value_name = "nsr|sr|nr|ir")]
    disable: Vec<String>,
    #[arg(long, value_name = "REAL")]
    margin: Option<f64>,
    #[arg(long, value_name = "REAL")]
    alpha: Option<f64>,
    #[arg(long, value_name = "REAL")]
    beta: Option<f64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Trained model for eval and the analysis commands
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_name = "U64", default_value_t = 1)]
    seed: u64,
    #[arg(long, value_name = "lstm|bilstm", default_value = "bilstm")]
    model: String,
    /// Output classes of the instance
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Sentence length, at most 6
    #[arg(long, default_value_t = 6)]
    len: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also write the snapshot and seed here
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            model: self.model.clone(),
            disable: self.disable.clone(),
            margin: self.margin,
            alpha: self.alpha,
            beta: self.beta,
            out: self.out.clone(),
            threads: self.threads,
            checkpoint: self.checkpoint.clone(),
        });
        Ok(cfg)
    }
}

/// Runs one command line (without the program name) and returns the exit
/// code: 0 on success, 1 on runtime failure, 2 on usage or configuration
/// errors.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("lrlstm")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gradcheck(a) => commands::gradcheck(&commands::GradcheckOptions {
            seed: a.seed,
            variant: a.model.parse().map_err(|_| CliError::Usage(format!("--model: unknown variant `{}` (lstm | bilstm)", a.model)))?,
            classes: a.classes,
            len: a.len,
            hidden: a.hidden,
            step: a.step,
            tolerance: a.tolerance,
            out: a.out,
        }),
        Command::Train(a) => commands::train(&prepare(&a, false)?),
        Command::Eval(a) => commands::eval(&prepare(&a, true)?),
        Command::Ablate(a) => commands::ablate(&prepare(&a, false)?),
        Command::Stats(a) => commands::stats(&prepare(&a, false)?),
        Command::Subset(a) => commands::subset(&prepare(&a, false)?),
        Command::AnalyzeNegation(a) => commands::analyze_negation(&prepare(&a, true)?),
        Command::AnalyzeIntensity(a) => commands::analyze_intensity(&prepare(&a, true)?),
        Command::ExportLexicon(a) => commands::export_lexicon(&prepare(&a, false)?),
    }
}

fn prepare(args: &CommonArgs, needs_checkpoint: bool) -> Result<RunConfig, CliError> {
    let cfg = args.resolve()?;
    cfg.check(needs_checkpoint)?;
    cfg.write_snapshot()?;
    Ok(cfg)
}
