//! Atomic artifact output, fixed-format CSV, and the run report.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version stamped into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Solver(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV cell.
#[derive(Clone, Debug)]
pub enum Cell {
    /// Floating-point value in fixed scientific format.
    Float(f64),
    /// Integer.
    Int(i64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

/// A CSV table with a single header row.
#[derive(Clone, Debug)]
pub struct Table {
    header: Vec<String>,
    text: String,
}

impl Table {
    /// Empty table with the given columns.
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        let header: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        let text = format!("{}\n", header.join(","));
        Self { header, text }
    }

    /// Appends a row; the cell count must match the header.
    pub fn push(&mut self, row: &[Cell]) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Float(v) => fmt_float(*v),
                Cell::Int(v) => v.to_string(),
            })
            .collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    /// CSV text.
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// A written file and its checksum.
#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    /// Path relative to the artifact directory.
    pub path: String,
    /// Size in bytes.
    pub bytes: u64,
    /// Hex SHA-256 of the contents.
    pub sha256: String,
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    manifest: Vec<ManifestEntry>,
}

impl ArtifactDir {
    /// Creates the directory if needed.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Validation(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Vec::new(),
        })
    }

    /// Writes `bytes` to `relative` atomically and records it.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.root.join(relative), bytes)?;
        let entry = ManifestEntry {
            path: relative.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex_digest(bytes),
        };
        self.manifest.retain(|e| e.path != relative);
        self.manifest.push(entry);
        Ok(())
    }

    /// Writes a CSV table.
    pub fn write_table(&mut self, relative: &str, table: &Table) -> Result<(), CliError> {
        self.write(relative, table.as_str().as_bytes())
    }

    /// Writes a JSON document with `schema_version` prepended.
    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<(), CliError> {
        let mut doc = serde_json::Map::new();
        doc.insert("schema_version".into(), SCHEMA_VERSION.into());
        match serde_json::to_value(value).map_err(|e| CliError::Solver(format!("json encoding: {e}")))? {
            serde_json::Value::Object(map) => doc.extend(map),
            other => {
                doc.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(doc))
            .map_err(|e| CliError::Solver(format!("json encoding: {e}")))?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    /// Files written so far.
    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }
}

/// Hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Wall-clock time of one stage.
#[derive(Clone, Debug, Serialize)]
pub struct StageTime {
    /// Stage name.
    pub stage: String,
    /// Elapsed seconds.
    pub seconds: f64,
}

/// Accumulates stage timings.
#[derive(Debug, Default)]
pub struct Stopwatch {
    stages: Vec<StageTime>,
}

impl Stopwatch {
    /// Runs `f` and records its duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTime {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Recorded stages.
    pub fn stages(&self) -> &[StageTime] {
        &self.stages
    }
}

/// Library and schema versions.
#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    /// Version of this executable.
    pub oscilla: &'static str,
    /// JSON schema version.
    pub schema: u32,
}

/// Machine-readable summary of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    /// Subcommand.
    pub command: String,
    /// Effective configuration.
    pub parameters: serde_json::Value,
    /// Hopf candidate summary, when the run located one.
    pub hopf_candidate: Option<serde_json::Value>,
    /// Non-resonance margins `(k, distance)`.
    pub margins: Option<Vec<(usize, f64)>>,
    /// Criticality fit of the branch.
    pub branch_fit: Option<serde_json::Value>,
    /// Every other file of the run with its checksum.
    pub manifest: Vec<ManifestEntry>,
    /// Versions.
    pub versions: Versions,
    /// Stage wall times.
    pub wall_times: Vec<StageTime>,
}

impl RunReport {
    /// Report skeleton for `command`.
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            parameters,
            hopf_candidate: None,
            margins: None,
            branch_fit: None,
            manifest: Vec::new(),
            versions: Versions {
                oscilla: env!("CARGO_PKG_VERSION"),
                schema: SCHEMA_VERSION,
            },
            wall_times: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(-2.5), "-2.5000000000000000e0");
        for v in [std::f64::consts::PI, 1e-300, -7.25e12] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn tables_have_one_header_row() {
        let mut t = Table::new(&["a", "b"]);
        t.push(&[Cell::Int(3), Cell::Float(0.5)]);
        assert_eq!(t.as_str(), "a,b\n3,5.0000000000000000e-1\n");
    }

    #[test]
    fn writes_are_atomic_and_checksummed() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = ArtifactDir::create(dir.path()).unwrap();
        out.write("sub/x.txt", b"abc").unwrap();
        out.write_json("r.json", &serde_json::json!({"k": 1})).unwrap();
        assert_eq!(fs::read(dir.path().join("sub/x.txt")).unwrap(), b"abc");
        assert_eq!(
            out.manifest()[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(json["schema_version"], 1);
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
