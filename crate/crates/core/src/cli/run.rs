//! Output bookkeeping shared by the subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use moe2_core::config::Config;
use moe2_core::io::{self, FileDigest, RunManifest, Timing, SCHEMA_VERSION};
use moe2_core::Result;
use serde::Serialize;
use tracing::info;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

/// One subcommand invocation: inputs are digested when opened, outputs when
/// the run finishes, and the manifest is written last.
pub struct Run {
    command: &'static str,
    argv: Vec<String>,
    out_dir: PathBuf,
    started: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    timings: Vec<Timing>,
}

impl Run {
    pub fn new(command: &'static str, argv: Vec<String>, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|source| moe2_core::Error::File {
            path: out_dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            command,
            argv,
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        let seconds = t0.elapsed().as_secs_f64();
        info!(stage = name, seconds, "stage done");
        self.timings.push(Timing { stage: name.to_string(), seconds });
        Ok(out)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(name);
        io::write_bytes(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_bytes(name, &io::to_json_bytes(value)?)
    }

    /// Writes the resolved configuration and the manifest.
    pub fn finish(mut self, config: &Config) -> Result<()> {
        let config_bytes = io::to_json_bytes(config)?;
        self.write_bytes(CONFIG, &config_bytes)?;
        for d in &self.inputs {
            d.verify()?;
        }
        let outputs = self.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            argv: self.argv,
            seed: Some(config.seed),
            config_sha256: io::sha256_hex(&config_bytes),
            inputs: self.inputs,
            outputs,
            timings: self.timings,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        io::write_json(&self.out_dir.join(MANIFEST), &manifest)?;
        info!(command = manifest.command, outputs = manifest.outputs.len(), "manifest written");
        Ok(())
    }
}
