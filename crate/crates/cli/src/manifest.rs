//! Append-only JSON-lines record of stage outcomes at the root of a run
//! directory.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub stage: String,
    pub status: Status,
    pub config_hash: String,
    pub artifacts: Vec<Artifact>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    records: Vec<Record>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    /// Reads the manifest in `dir`, dropping a torn final line left by a
    /// killed process so later appends start on a fresh line.
    pub fn open(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let complete = match text.rfind('\n') {
                Some(i) => i + 1,
                None => 0,
            };
            if complete < text.len() {
                log::warn!("dropping incomplete manifest line in {}", path.display());
                let f = OpenOptions::new().write(true).open(&path).map_err(|e| CliError::io(&path, e))?;
                f.set_len(complete as u64).map_err(|e| CliError::io(&path, e))?;
            }
            for (no, line) in text[..complete].lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(line).map_err(|e| {
                    CliError::Stage(format!("{} line {}: {e}", path.display(), no + 1))
                })?;
                records.push(rec);
            }
        }
        Ok(Manifest { path, records })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Latest record for `stage`, if any.
    pub fn latest(&self, stage: &str) -> Option<&Record> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }

    /// True when the latest record of `stage` is a success under
    /// `config_hash` and every artifact it lists is still on disk unchanged.
    pub fn is_current(&self, stage: &str, config_hash: &str, dir: &Path) -> bool {
        match self.latest(stage) {
            Some(r) if r.status == Status::Done && r.config_hash == config_hash => r
                .artifacts
                .iter()
                .all(|a| sha256_file(&dir.join(&a.path)).map(|h| h == a.sha256).unwrap_or(false)),
            _ => false,
        }
    }

    pub fn append(&mut self, record: Record) -> Result<(), CliError> {
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        let mut f: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| CliError::io(&self.path, e))?;
        f.sync_data().map_err(|e| CliError::io(&self.path, e))?;
        self.records.push(record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(stage: &str, status: Status, hash: &str) -> Record {
        Record {
            stage: stage.into(),
            status,
            config_hash: hash.into(),
            artifacts: vec![],
            seconds: 0.5,
            error: None,
        }
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::open(dir.path()).unwrap();
        m.append(rec("a", Status::Done, "h1")).unwrap();
        m.append(rec("a", Status::Failed, "h2")).unwrap();
        let m = Manifest::open(dir.path()).unwrap();
        assert_eq!(m.records().len(), 2);
        assert_eq!(m.latest("a").unwrap().status, Status::Failed);
        assert!(!m.is_current("a", "h1", dir.path()));
        assert!(m.latest("b").is_none());
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::open(dir.path()).unwrap();
        m.append(rec("a", Status::Done, "h1")).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"stage\":\"b\",\"sta").unwrap();
        let mut m = Manifest::open(dir.path()).unwrap();
        assert_eq!(m.records().len(), 1);
        m.append(rec("b", Status::Done, "h2")).unwrap();
        assert_eq!(Manifest::open(dir.path()).unwrap().records().len(), 2);
    }

    #[test]
    fn changed_artifact_is_not_current() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("x.bin");
        std::fs::write(&file, b"abc").unwrap();
        let mut m = Manifest::open(dir.path()).unwrap();
        let mut r = rec("a", Status::Done, "h");
        r.artifacts.push(Artifact {
            path: "x.bin".into(),
            sha256: sha256_file(&file).unwrap(),
        });
        m.append(r).unwrap();
        assert!(m.is_current("a", "h", dir.path()));
        std::fs::write(&file, b"abd").unwrap();
        assert!(!m.is_current("a", "h", dir.path()));
    }
}
