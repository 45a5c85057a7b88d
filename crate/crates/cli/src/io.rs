//! File plumbing: atomic writes, digests, run manifests and cohort loading.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use grudw_core::cohort::Cohort;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_cohort(path: &Path) -> CliResult<Cohort> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let cohort = Cohort::read_jsonl(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(cohort.sorted())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub extra: Value,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        Self {
            tool: "grudw",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    /// Writes an artifact atomically and records its digest.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        atomic_write(path, bytes)?;
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        atomic_write(path, &to_json_bytes(self)?)
    }
}

/// Tab-separated table builder; undefined cells are written as `NA`.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[String]) -> CliResult<Self> {
        let mut writer = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, cells: &[String]) -> CliResult<()> {
        Ok(self.writer.write_record(cells)?)
    }

    pub fn into_bytes(self) -> CliResult<Vec<u8>> {
        self.writer.into_inner().map_err(|e| CliError::Data(e.to_string()))
    }
}

pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}
