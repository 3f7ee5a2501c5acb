//! Per-command context: resolved config, output directory, and the run
//! manifest written next to the artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowcast_core::config::RunConfig;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    profile: &'a str,
    config: &'a BTreeMap<String, String>,
    inputs: &'a [InputRecord],
    outputs: &'a [String],
    wall_time_secs: f64,
}

pub struct Run {
    pub command: &'static str,
    pub config: RunConfig,
    pub profile: String,
    out: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn new(command: &'static str, config: RunConfig, profile: String, out: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(Self {
            command,
            config,
            profile,
            out,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Opens an input file and records it in the manifest.
    pub fn open(&mut self, path: &Path) -> CliResult<File> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let bytes = file.metadata().map_err(|e| CliError::io(path, e))?.len();
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            bytes,
        });
        Ok(file)
    }

    /// Creates `name` in the output directory and records it.
    pub fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| CliError::io(&self.out.join(name), e))?;
        w.flush().map_err(|e| CliError::io(&self.out.join(name), e))?;
        Ok(())
    }

    /// The config echo embedded in JSON artifacts.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.config.to_pairs()
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.outputs.sort();
        let config = self.echo();
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.config.seed,
            profile: &self.profile,
            config: &config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(())
    }
}

/// Wraps a JSON artifact with the config echo and seed.
#[derive(Debug, Serialize)]
pub struct Artifact<'a, T> {
    pub seed: u64,
    pub config: &'a BTreeMap<String, String>,
    #[serde(flatten)]
    pub body: T,
}
