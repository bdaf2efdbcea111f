//! Command-line frontend: `fit`, `extract`, `metrics`, `slice`, `analyze`.
//!
//! Every command writes into its own run directory together with a
//! `manifest.json`. Exit codes: 0 success, 64 usage, 1 I/O, 2 divergence,
//! 3 precondition.

mod args;
mod commands;
mod run_dir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Deserialize;

use eisr::metrics::MetricConfig;
use eisr::optimizer::FitConfig;
use eisr::Execution;

pub use args::Cli;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Diverged(String),
    Precondition(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Io(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Precondition(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Diverged(m) | CliError::Precondition(m) => m,
        }
    }
}

/// Optional `--config` file contents.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub metrics: Option<MetricConfig>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Settings shared by all commands.
pub struct Context {
    pub seed: Option<u64>,
    pub threads: usize,
    pub deterministic: bool,
    pub force: bool,
    pub config: ConfigFile,
    pub config_path: Option<PathBuf>,
}

impl Context {
    pub fn exec(&self) -> Execution {
        if self.deterministic {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if g.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {} threads: {e}", g.threads)))?;
    }
    let config = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Context {
        seed: g.seed,
        threads: g.threads,
        deterministic: g.deterministic,
        force: g.force,
        config,
        config_path: g.config,
    };
    match cli.command {
        args::Command::Fit(a) => commands::fit(&ctx, a),
        args::Command::Extract(a) => commands::extract(&ctx, a),
        args::Command::Metrics(a) => commands::metrics(&ctx, a),
        args::Command::Slice(a) => commands::slice(&ctx, a),
        args::Command::Analyze(a) => commands::analyze(&ctx, a),
    }
}
