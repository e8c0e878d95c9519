//! Versioned JSON documents, file digests and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Fleet, Workload};
use crate::error::{Error, Result};
use crate::gating::GatingParams;

/// Version of every JSON document written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetDocument {
    pub schema_version: u32,
    pub experts: Fleet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDocument {
    pub schema_version: u32,
    pub workload: Workload,
}

pub fn check_schema(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Schema { found, expected: SCHEMA_VERSION });
    }
    Ok(())
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.display().to_string(), source }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(file_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value)?)
}

/// Parses a document after checking its `schema_version`, so a document from
/// another version fails with a schema error rather than a parse error.
/// `origin` prefixes parse errors.
pub fn parse_versioned<T: DeserializeOwned>(bytes: &[u8], origin: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Probe {
        schema_version: u32,
    }
    let invalid = |e: serde_json::Error| Error::Invalid(format!("{origin}: {e}"));
    let probe: Probe = serde_json::from_slice(bytes).map_err(invalid)?;
    check_schema(probe.schema_version)?;
    serde_json::from_slice(bytes).map_err(invalid)
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_versioned(&read_bytes(path)?, &path.display().to_string())
}

pub fn parse_fleet(bytes: &[u8], origin: &str) -> Result<Fleet> {
    Ok(parse_versioned::<FleetDocument>(bytes, origin)?.experts)
}

pub fn read_fleet(path: &Path) -> Result<Fleet> {
    parse_fleet(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_fleet(path: &Path, fleet: &Fleet) -> Result<()> {
    write_json(path, &FleetDocument { schema_version: SCHEMA_VERSION, experts: fleet.clone() })
}

pub fn parse_workload(bytes: &[u8], origin: &str) -> Result<Workload> {
    let doc: WorkloadDocument = parse_versioned(bytes, origin)?;
    doc.workload.validate()?;
    Ok(doc.workload)
}

pub fn read_workload(path: &Path) -> Result<Workload> {
    parse_workload(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_workload(path: &Path, workload: &Workload) -> Result<()> {
    write_json(path, &WorkloadDocument { schema_version: SCHEMA_VERSION, workload: workload.clone() })
}

pub fn parse_params(bytes: &[u8], origin: &str) -> Result<GatingParams> {
    let theta: GatingParams = serde_json::from_slice(bytes).map_err(|e| Error::Invalid(format!("{origin}: {e}")))?;
    theta.validate()?;
    Ok(theta)
}

pub fn read_params(path: &Path) -> Result<GatingParams> {
    parse_params(&read_bytes(path)?, &path.display().to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = read_bytes(path)?;
        Ok(Self { path: path.to_path_buf(), sha256: sha256_hex(&data), bytes: data.len() as u64 })
    }

    /// Fails when the file no longer has this digest.
    pub fn verify(&self) -> Result<()> {
        let now = FileDigest::of(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(Error::Invalid(format!("{} changed during the run", self.path.display())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance of one CLI run, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved configuration as written to `config.json`.
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<Timing>,
    pub wall_seconds: f64,
}

impl RunManifest {
    /// Checks every recorded input and output against its digest.
    pub fn verify(&self) -> Result<()> {
        self.inputs.iter().chain(&self.outputs).try_for_each(FileDigest::verify)
    }
}
