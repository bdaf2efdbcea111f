use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use super::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Output directory of one command invocation.
pub struct RunDir {
    root: PathBuf,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `root`, refusing to reuse a non-empty directory without `force`.
    pub fn create(root: &Path, force: bool) -> Result<Self, CliError> {
        if root.exists() {
            let non_empty = fs::read_dir(root)
                .map_err(|e| CliError::io(root, e))?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(CliError::Precondition(format!(
                    "{} already exists and is not empty; pass --force to overwrite",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.record(path.clone());
        Ok(path)
    }

    pub fn record(&mut self, path: PathBuf) {
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    pub fn finish(mut self, manifest: ManifestBuilder) -> Result<(), CliError> {
        let outputs = std::mem::take(&mut self.outputs);
        let m = manifest.build(outputs);
        let text = serde_json::to_string_pretty(&m).expect("manifest is serializable");
        let path = self.path(MANIFEST);
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

#[derive(Serialize)]
struct Host {
    os: &'static str,
    arch: &'static str,
    cpus: usize,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    argv: Vec<String>,
    seed: Option<u64>,
    threads: usize,
    deterministic: bool,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    wall_clock_seconds: f64,
    host: Host,
    notes: Vec<String>,
    details: Value,
}

/// Accumulates manifest fields while a command runs.
pub struct ManifestBuilder {
    started: Instant,
    pub command: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub deterministic: bool,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub notes: Vec<String>,
    pub details: Value,
}

impl ManifestBuilder {
    pub fn new(command: &str, threads: usize, deterministic: bool) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            command: command.to_string(),
            seed: None,
            threads,
            deterministic,
            config: Value::Null,
            inputs: Vec::new(),
            notes: Vec::new(),
            details: Value::Null,
        }
    }

    fn build(self, outputs: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            tool: "eisr",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            threads: self.threads,
            deterministic: self.deterministic,
            config: self.config,
            inputs: self.inputs,
            outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            host: Host {
                os: std::env::consts::OS,
                arch: std::env::consts::ARCH,
                cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            },
            notes: self.notes,
            details: self.details,
        }
    }
}
