//! Command-line harness: every command reads one JSON [`RunConfig`],
//! validates all of it, and only then touches the filesystem.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod error;

use std::path::Path;

pub use config::{parse_run_config, Overrides, RunConfig};
pub use error::{CliError, CliResult, FailureClass, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_WARNING};

pub const CHECKPOINT_FILE: &str = "model.dsegmdl";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

/// Environment variable capping the worker thread count.
pub const THREADS_VAR: &str = "DEEPSEG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Predict,
    Evaluate,
    Benchmark,
    Synth,
    AugmentPreview,
}

impl Command {
    fn needs_data(self) -> bool {
        !matches!(self, Command::Evaluate | Command::Benchmark)
    }
}

/// Non-fatal problems; any warning turns the exit status into
/// [`EXIT_WARNING`].
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

pub fn configure_threads(value: Option<&str>) -> CliResult<Option<usize>> {
    let Some(raw) = value else { return Ok(None) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<Outcome> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.validate(command.needs_data())?;
    match command {
        Command::Train => commands::train(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Benchmark => benchmark::run(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::AugmentPreview => commands::augment_preview(&cfg),
    }
}

/// Runs a command and maps the result to an exit status, reporting errors
/// on stderr.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> i32 {
    if let Err(e) = configure_threads(std::env::var(THREADS_VAR).ok().as_deref()) {
        eprintln!("error: {e}");
        return e.class.exit_code();
    }
    match execute(command, config_path, overrides) {
        Ok(outcome) if outcome.warnings.is_empty() => EXIT_OK,
        Ok(outcome) => {
            eprintln!("finished with {} warning(s)", outcome.warnings.len());
            EXIT_WARNING
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.class.exit_code()
        }
    }
}
