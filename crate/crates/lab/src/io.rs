//! Atomic file output, CSV tables with metadata sidecars, and the run
//! manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

/// Writes to `<path>.tmp` and renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> LabResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn sha256_file(path: &Path) -> LabResult<String> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Round-trip-safe float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

/// An in-memory table written as CSV with a one-line header.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Float(x) => fmt_f64(*x),
                    Cell::Int(i) => i.to_string(),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Sidecar written next to every CSV as `<name>.csv.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvMeta {
    pub columns: Vec<String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Spectrum (Hamiltonian) hashes by chain length.
    pub spectrum_hashes: BTreeMap<String, String>,
    pub description: String,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

pub fn write_table(path: &Path, table: &Table, meta: &CsvMeta) -> LabResult<()> {
    atomic_write(path, table.to_csv().as_bytes())?;
    write_json(&meta_path(path), meta)
}

/// Reads a CSV written by [`write_table`] into one map per row.
pub fn read_table(path: &Path) -> LabResult<Vec<BTreeMap<String, String>>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != header.len() {
                return Err(LabError::Artifact {
                    path: path.to_path_buf(),
                    message: format!("row has {} cells, header has {}", cells.len(), header.len()),
                });
            }
            Ok(header.iter().zip(cells).map(|(h, c)| (h.to_string(), c.to_string())).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory, or absolute.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of everything the stage read; equal inputs and intact outputs
    /// make a rerun a no-op.
    pub inputs_hash: String,
    pub finished_unix: u64,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads `manifest.json` from `out`, or starts a fresh one when it is
    /// missing or belongs to another configuration.
    pub fn load_or_new(out: &Path, config_hash: &str) -> LabResult<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let m: Self = read_json(&path)?;
        if m.config_hash != config_hash || m.schema_version != MANIFEST_SCHEMA {
            log::info!("manifest in {} belongs to another configuration; starting afresh", out.display());
            return Ok(Self::new(config_hash));
        }
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> LabResult<()> {
        write_json(&out.join(MANIFEST_FILE), self)
    }

    /// Records a finished stage, hashing its artifacts.
    pub fn record(&mut self, out: &Path, stage: &str, inputs_hash: &str, files: &[PathBuf]) -> LabResult<()> {
        let mut artifacts = Vec::new();
        for f in files {
            // files outside `out` (the spectrum cache) are kept absolute
            let rel = match f.strip_prefix(out) {
                Ok(r) => r.to_path_buf(),
                Err(_) => std::path::absolute(f).map_err(|e| LabError::io(f, e))?,
            };
            artifacts.push(ArtifactEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(f)?,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let finished_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs_hash: inputs_hash.to_string(),
                finished_unix,
                artifacts,
            },
        );
        Ok(())
    }

    /// Whether `stage` finished with the same inputs and all its files are
    /// intact.
    pub fn is_current(&self, out: &Path, stage: &str, inputs_hash: &str) -> bool {
        match self.stages.get(stage) {
            Some(rec) if rec.inputs_hash == inputs_hash => rec
                .artifacts
                .iter()
                .all(|a| sha256_file(&out.join(&a.path)).is_ok_and(|h| h == a.sha256)),
            _ => false,
        }
    }

    /// Every problem found: missing files and hash mismatches.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for (stage, rec) in &self.stages {
            for a in &rec.artifacts {
                match sha256_file(&out.join(&a.path)) {
                    Ok(h) if h == a.sha256 => {}
                    Ok(_) => problems.push(format!("{stage}: {} changed", a.path)),
                    Err(_) => problems.push(format!("{stage}: {} missing", a.path)),
                }
            }
        }
        problems
    }
}

pub fn hash_strings<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_csv_layout() {
        let mut t = Table::new(&["R", "value", "label"]);
        t.push(vec![1usize.into(), 0.5.into(), "Z".into()]);
        assert_eq!(t.to_csv(), "R,value,label\n1,5.0000000000000000e-1,Z\n");
    }

    #[test]
    fn manifest_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let f = out.join("a/b.csv");
        atomic_write(&f, b"x\n").unwrap();
        let mut m = RunManifest::new("cfg");
        m.record(out, "stage", "in", &[f.clone()]).unwrap();
        assert!(m.is_current(out, "stage", "in"));
        assert!(!m.is_current(out, "stage", "other"));
        assert!(m.verify(out).is_empty());
        m.save(out).unwrap();
        assert_eq!(RunManifest::load_or_new(out, "cfg").unwrap(), m);
        assert!(RunManifest::load_or_new(out, "new").unwrap().stages.is_empty());
        fs::write(&f, b"y\n").unwrap();
        assert!(!m.is_current(out, "stage", "in"));
        assert_eq!(m.verify(out).len(), 1);
        fs::remove_file(&f).unwrap();
        assert!(m.verify(out)[0].contains("missing"));
    }
}
