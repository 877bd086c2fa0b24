use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ArchiveError, RecordKind, Result};
use crate::digest::sha256_hex;

#[derive(Serialize, Deserialize)]
struct Line {
    k: String,
    v: Value,
}

pub(super) fn log_path(root: &Path, kind: RecordKind) -> PathBuf {
    root.join("records").join(format!("{}.log", kind.name()))
}

fn checksum(json: &[u8]) -> String {
    sha256_hex(json)[..8].to_string()
}

fn encode(key: &str, value: &Value) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&Line {
        k: key.to_string(),
        v: value.clone(),
    })?;
    let mut line = Vec::with_capacity(json.len() + 10);
    line.extend_from_slice(checksum(&json).as_bytes());
    line.push(b' ');
    line.extend_from_slice(&json);
    line.push(b'\n');
    Ok(line)
}

fn decode(line: &[u8]) -> Option<Line> {
    if line.len() < 10 || line[8] != b' ' {
        return None;
    }
    let (sum, json) = (&line[..8], &line[9..]);
    if sum != checksum(json).as_bytes() {
        return None;
    }
    serde_json::from_slice(json).ok()
}

/// Rebuild the key → latest payload map from a log. A torn tail is
/// truncated when `repair` is set and skipped otherwise.
pub(super) fn replay(path: &Path, kind: RecordKind, repair: bool) -> Result<BTreeMap<String, Value>> {
    let mut map = BTreeMap::new();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            if repair {
                tracing::warn!(?path, line = line_no, "discarding torn trailing record");
                truncate(path, offset)?;
            }
            break;
        };
        let end = offset + nl + 1;
        match decode(&rest[..nl]) {
            Some(line) => {
                map.insert(line.k, line.v);
            }
            None if end == bytes.len() => {
                if repair {
                    tracing::warn!(?path, line = line_no, "discarding torn trailing record");
                    truncate(path, offset)?;
                }
                break;
            }
            None => return Err(ArchiveError::Corrupt { kind, line: line_no }),
        }
        offset = end;
    }
    Ok(map)
}

fn truncate(path: &Path, len: usize) -> Result<()> {
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(len as u64)?;
    f.sync_all()?;
    Ok(())
}

pub(super) struct LogWriter {
    root: PathBuf,
    files: HashMap<RecordKind, File>,
}

impl LogWriter {
    pub(super) fn open(root: &Path) -> std::io::Result<Self> {
        let mut files = HashMap::new();
        for kind in RecordKind::ALL.into_iter().filter(|k| k.logged()) {
            files.insert(kind, open_append(&log_path(root, kind))?);
        }
        Ok(Self {
            root: root.to_path_buf(),
            files,
        })
    }

    pub(super) fn append(&mut self, kind: RecordKind, key: &str, value: &Value) -> Result<()> {
        let line = encode(key, value)?;
        let file = self.files.get_mut(&kind).expect("log opened for every kind");
        file.write_all(&line)?;
        Ok(())
    }

    pub(super) fn sync(&mut self) -> std::io::Result<()> {
        for f in self.files.values_mut() {
            f.flush()?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub(super) fn rewrite(&mut self, kind: RecordKind, records: &BTreeMap<String, Value>) -> Result<()> {
        let path = log_path(&self.root, kind);
        let tmp = path.with_extension("log.tmp");
        {
            let mut f = File::create(&tmp)?;
            for (k, v) in records {
                f.write_all(&encode(k, v)?)?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        self.files.insert(kind, open_append(&path)?);
        Ok(())
    }
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}
