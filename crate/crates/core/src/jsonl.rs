//! Append-only JSON Lines logs and stage checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl JsonlError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Line-delimited JSON writer that tracks its byte offset, so a checkpoint
/// can record exactly how much of the log is durable.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
    offset: u64,
}

impl JsonlWriter {
    /// Opens `path` for appending after discarding anything past `offset`.
    pub fn open_at(path: &Path, offset: u64) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        file.set_len(offset).map_err(|e| JsonlError::io(path, e))?;
        let mut file = file;
        file.seek(SeekFrom::Start(offset))
            .map_err(|e| JsonlError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            offset,
        })
    }

    pub fn create(path: &Path) -> Result<Self, JsonlError> {
        Self::open_at(path, 0)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(record).expect("log records serialize");
        line.push(b'\n');
        self.out
            .write_all(&line)
            .map_err(|e| JsonlError::io(&self.path, e))?;
        self.offset += line.len() as u64;
        Ok(())
    }

    /// Flushes and syncs; returns the durable offset.
    pub fn commit(&mut self) -> Result<u64, JsonlError> {
        self.out.flush().map_err(|e| JsonlError::io(&self.path, e))?;
        self.out
            .get_ref()
            .sync_data()
            .map_err(|e| JsonlError::io(&self.path, e))?;
        Ok(self.offset)
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }
}

pub fn for_each_record<T, F>(path: &Path, mut f: F) -> Result<(), JsonlError>
where
    T: DeserializeOwned,
    F: FnMut(T),
{
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        f(rec);
    }
    Ok(())
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for_each_record(path, |r| out.push(r))?;
    Ok(out)
}

/// Resume point of a stage: everything before `high_water` (in the stage's
/// own input order) is logged in the first `log_offset` bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: String,
    pub high_water: u64,
    /// Human-readable marker for the last completed unit (address, name, phase).
    pub last_completed: Option<String>,
    pub log_offset: u64,
    pub complete: bool,
}

impl Checkpoint {
    pub fn start(stage: &str) -> Self {
        Checkpoint {
            stage: stage.to_string(),
            high_water: 0,
            last_completed: None,
            log_offset: 0,
            complete: false,
        }
    }

    /// Loads a checkpoint for `stage`; a missing file means "start over".
    pub fn load(path: &Path, stage: &str) -> Result<Self, JsonlError> {
        match fs::read(path) {
            Ok(bytes) => {
                let cp: Checkpoint = serde_json::from_slice(&bytes).map_err(|source| JsonlError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    source,
                })?;
                if cp.stage == stage {
                    Ok(cp)
                } else {
                    Ok(Checkpoint::start(stage))
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Checkpoint::start(stage)),
            Err(e) => Err(JsonlError::io(path, e)),
        }
    }

    pub fn store(&self, path: &Path) -> Result<(), JsonlError> {
        write_atomic(path, &serde_json::to_vec_pretty(self).expect("checkpoint serializes"))
    }
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(|e| JsonlError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| JsonlError::io(&tmp, e))?;
        f.sync_data().map_err(|e| JsonlError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| JsonlError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reopen_discards_uncommitted_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = JsonlWriter::create(&path).unwrap();
        w.write(&serde_json::json!({"a": 1})).unwrap();
        let committed = w.commit().unwrap();
        w.write(&serde_json::json!({"a": 2})).unwrap();
        w.commit().unwrap();
        drop(w);
        let mut w = JsonlWriter::open_at(&path, committed).unwrap();
        w.write(&serde_json::json!({"a": 3})).unwrap();
        w.commit().unwrap();
        let recs: Vec<serde_json::Value> = read_records(&path).unwrap();
        assert_eq!(recs, vec![serde_json::json!({"a": 1}), serde_json::json!({"a": 3})]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"a\":1}\nnot json\n").unwrap();
        let err = read_records::<serde_json::Value>(&path).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn checkpoint_roundtrip_and_stage_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        assert_eq!(Checkpoint::load(&path, "x").unwrap(), Checkpoint::start("x"));
        let mut cp = Checkpoint::start("x");
        cp.high_water = 9;
        cp.log_offset = 120;
        cp.store(&path).unwrap();
        assert_eq!(Checkpoint::load(&path, "x").unwrap(), cp);
        assert_eq!(Checkpoint::load(&path, "y").unwrap(), Checkpoint::start("y"));
    }
}
