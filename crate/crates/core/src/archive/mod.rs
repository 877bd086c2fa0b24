//! Embedded, append-only record store.
//!
//! Layout under `<data_dir>/archive/`:
//!
//! ```text
//! records/<kind>.log   one line per write: "<crc8> <json>\n"
//! blobs/<aa>/<digest>  raw bytes, content-addressed by SHA-256
//! meta/<name>          small state files (scheduler seed, epoch state)
//! LOCK                 present while a daemon owns the directory
//! ```
//!
//! Every write goes through one serialized writer. A record line is appended
//! with a single `write_all`; on open, a torn trailing line (no newline or a
//! checksum mismatch) is discarded, so each record is either fully present
//! or absent after a crash. Readers work on an in-memory index and get
//! snapshot copies.

mod blob;
mod lock;
mod log;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use blob::BlobStore;
pub use lock::DirLock;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive unavailable at {path}: {source}")]
    Unavailable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("immutable {kind} record {key} already stored with different content")]
    ImmutableConflict { kind: RecordKind, key: String },
    #[error("{kind} record {key} failed validation: {reason}")]
    ValidationFailed {
        kind: RecordKind,
        key: String,
        reason: String,
    },
    #[error("corrupt {kind} log at line {line}")]
    Corrupt { kind: RecordKind, line: usize },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("data directory is locked by another process ({0})")]
    Locked(String),
    #[error("archive was opened read-only")]
    ReadOnly,
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Article,
    Embed,
    Tweet,
    User,
    Blob,
    QueueItem,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::Article,
        RecordKind::Embed,
        RecordKind::Tweet,
        RecordKind::User,
        RecordKind::Blob,
        RecordKind::QueueItem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Article => "article",
            RecordKind::Embed => "embed",
            RecordKind::Tweet => "tweet",
            RecordKind::User => "user",
            RecordKind::Blob => "blob",
            RecordKind::QueueItem => "queue_item",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn logged(self) -> bool {
        self != RecordKind::Blob
    }
}

impl std::fmt::Display for RecordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How an incoming payload relates to one already stored under its key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    /// Leave the stored record as is.
    Keep,
    /// Overwrite with the incoming record.
    Replace,
    /// The kind is immutable and the payloads disagree.
    Conflict,
}

/// A typed record persisted in one of the logs.
pub trait Record: Serialize + DeserializeOwned + Clone + PartialEq {
    const KIND: RecordKind;

    fn key(&self) -> String;

    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Called only when the stored and incoming payloads differ.
    fn merge(_stored: &Self, _incoming: &Self) -> Merge {
        Merge::Replace
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsertOutcome {
    Inserted,
    Unchanged,
    Updated,
}

type Index = HashMap<RecordKind, BTreeMap<String, Value>>;

pub struct Archive {
    root: PathBuf,
    index: RwLock<Index>,
    /// `None` for read-only snapshots.
    writer: Mutex<Option<log::LogWriter>>,
    blobs: BlobStore,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive").field("root", &self.root).finish()
    }
}

impl Archive {
    /// Open (creating if needed) the archive under `data_dir/archive`.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(data_dir.as_ref(), true)
    }

    /// Open a snapshot for reading only. Nothing on disk is created or
    /// repaired, so this is safe while another process is writing; a torn
    /// trailing record is simply not visible.
    pub fn open_read_only(data_dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(data_dir.as_ref(), false)
    }

    fn open_with(data_dir: &Path, writable: bool) -> Result<Self> {
        let root = data_dir.join("archive");
        let unavailable = |source| ArchiveError::Unavailable {
            path: root.clone(),
            source,
        };
        if writable {
            for sub in ["records", "blobs", "meta"] {
                fs::create_dir_all(root.join(sub)).map_err(unavailable)?;
            }
        } else if !root.is_dir() {
            return Err(unavailable(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no archive in data directory",
            )));
        }
        let mut index = Index::new();
        for kind in RecordKind::ALL.into_iter().filter(|k| k.logged()) {
            let path = log::log_path(&root, kind);
            index.insert(kind, log::replay(&path, kind, writable)?);
        }
        let writer = if writable {
            Some(log::LogWriter::open(&root).map_err(unavailable)?)
        } else {
            None
        };
        Ok(Self {
            blobs: BlobStore::new(root.join("blobs")),
            root,
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    fn write_guard(&self) -> Result<std::sync::MutexGuard<'_, Option<log::LogWriter>>> {
        let guard = self.writer.lock().expect("archive writer poisoned");
        if guard.is_none() {
            return Err(ArchiveError::ReadOnly);
        }
        Ok(guard)
    }

    pub fn is_read_only(&self) -> bool {
        self.writer.lock().expect("archive writer poisoned").is_none()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn upsert<R: Record>(&self, record: &R) -> Result<UpsertOutcome> {
        let key = record.key();
        record.validate().map_err(|reason| ArchiveError::ValidationFailed {
            kind: R::KIND,
            key: key.clone(),
            reason,
        })?;
        let value = serde_json::to_value(record)?;

        let mut guard = self.writer.lock().expect("archive writer poisoned");
        let writer = guard.as_mut().ok_or(ArchiveError::ReadOnly)?;
        let outcome = {
            let index = self.index.read().expect("archive index poisoned");
            match index.get(&R::KIND).and_then(|m| m.get(&key)) {
                None => UpsertOutcome::Inserted,
                Some(stored) if *stored == value => UpsertOutcome::Unchanged,
                Some(stored) => {
                    let stored: R = serde_json::from_value(stored.clone())?;
                    match R::merge(&stored, record) {
                        Merge::Keep => UpsertOutcome::Unchanged,
                        Merge::Replace => UpsertOutcome::Updated,
                        Merge::Conflict => return Err(ArchiveError::ImmutableConflict { kind: R::KIND, key }),
                    }
                }
            }
        };
        if outcome != UpsertOutcome::Unchanged {
            writer.append(R::KIND, &key, &value)?;
            self.index
                .write()
                .expect("archive index poisoned")
                .entry(R::KIND)
                .or_default()
                .insert(key, value);
        }
        Ok(outcome)
    }

    pub fn get<R: Record>(&self, key: &str) -> Option<R> {
        let index = self.index.read().expect("archive index poisoned");
        index
            .get(&R::KIND)
            .and_then(|m| m.get(key))
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    pub fn contains(&self, kind: RecordKind, key: &str) -> bool {
        if kind == RecordKind::Blob {
            return self.blobs.contains(key);
        }
        let index = self.index.read().expect("archive index poisoned");
        index.get(&kind).is_some_and(|m| m.contains_key(key))
    }

    /// Snapshot of every record of type `R` passing `filter`, ordered by key.
    pub fn scan<R, F>(&self, filter: F) -> std::vec::IntoIter<R>
    where
        R: Record,
        F: Fn(&R) -> bool,
    {
        let snapshot: Vec<Value> = {
            let index = self.index.read().expect("archive index poisoned");
            index
                .get(&R::KIND)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default()
        };
        snapshot
            .into_iter()
            .filter_map(|v| serde_json::from_value::<R>(v).ok())
            .filter(|r| filter(r))
            .collect::<Vec<_>>()
            .into_iter()
    }

    pub fn scan_all<R: Record>(&self) -> std::vec::IntoIter<R> {
        self.scan(|_: &R| true)
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        if kind == RecordKind::Blob {
            return self.blobs.list().map(|v| v.len()).unwrap_or(0);
        }
        let index = self.index.read().expect("archive index poisoned");
        index.get(&kind).map_or(0, |m| m.len())
    }

    /// Record counts for every kind, in [`RecordKind::ALL`] order.
    pub fn counts(&self) -> BTreeMap<RecordKind, usize> {
        RecordKind::ALL.into_iter().map(|k| (k, self.count(k))).collect()
    }

    /// Store `bytes` and return their digest.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<(String, UpsertOutcome)> {
        let _writer = self.write_guard()?;
        self.blobs.put(bytes)
    }

    /// Store `bytes` under an explicit digest; differing bytes under an
    /// existing digest are an [`ArchiveError::ImmutableConflict`].
    pub fn put_blob_at(&self, digest: &str, bytes: &[u8]) -> Result<UpsertOutcome> {
        let _writer = self.write_guard()?;
        self.blobs.put_at(digest, bytes)
    }

    pub fn read_blob(&self, digest: &str) -> Result<Vec<u8>> {
        self.blobs.get(digest)
    }

    pub fn read_meta(&self, name: &str) -> Result<Option<Vec<u8>>> {
        match fs::read(self.root.join("meta").join(name)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_meta(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let _writer = self.write_guard()?;
        let dir = self.root.join("meta");
        let tmp = dir.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(tmp, dir.join(name))?;
        Ok(())
    }

    /// Flush and fsync every log.
    pub fn sync(&self) -> Result<()> {
        if let Some(w) = self.writer.lock().expect("archive writer poisoned").as_mut() {
            w.sync()?;
        }
        Ok(())
    }

    /// Rewrite each log so it holds exactly one line per live key.
    pub fn compact(&self) -> Result<CompactReport> {
        let mut guard = self.write_guard()?;
        let writer = guard.as_mut().expect("checked by write_guard");
        let index = self.index.read().expect("archive index poisoned");
        let mut report = CompactReport::default();
        for kind in RecordKind::ALL.into_iter().filter(|k| k.logged()) {
            let path = log::log_path(&self.root, kind);
            let before = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            let empty = BTreeMap::new();
            let records = index.get(&kind).unwrap_or(&empty);
            writer.rewrite(kind, records)?;
            let after = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
            report.bytes_before += before;
            report.bytes_after += after;
            report.records += records.len();
        }
        Ok(report)
    }

    /// One NDJSON line per record of `kind`, in key order. Blob lines carry
    /// the digest and size only.
    pub fn export_ndjson<W: Write>(&self, kind: RecordKind, mut out: W) -> Result<usize> {
        let mut n = 0;
        if kind == RecordKind::Blob {
            for digest in self.blobs.list()? {
                let size = self.blobs.size(&digest)?;
                serde_json::to_writer(&mut out, &serde_json::json!({"digest": digest, "size": size}))?;
                out.write_all(b"\n")?;
                n += 1;
            }
            return Ok(n);
        }
        let index = self.index.read().expect("archive index poisoned");
        if let Some(records) = index.get(&kind) {
            for value in records.values() {
                serde_json::to_writer(&mut out, value)?;
                out.write_all(b"\n")?;
                n += 1;
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct CompactReport {
    pub records: usize,
    pub bytes_before: u64,
    pub bytes_after: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Note {
        id: String,
        body: String,
    }

    impl Record for Note {
        const KIND: RecordKind = RecordKind::Article;
        fn key(&self) -> String {
            self.id.clone()
        }
        fn validate(&self) -> std::result::Result<(), String> {
            if self.id.is_empty() {
                Err("empty id".into())
            } else {
                Ok(())
            }
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Frozen {
        id: String,
        body: String,
    }

    impl Record for Frozen {
        const KIND: RecordKind = RecordKind::Tweet;
        fn key(&self) -> String {
            self.id.clone()
        }
        fn merge(_: &Self, _: &Self) -> Merge {
            Merge::Conflict
        }
    }

    fn note(id: &str, body: &str) -> Note {
        Note {
            id: id.into(),
            body: body.into(),
        }
    }

    #[test]
    fn upsert_outcomes() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        assert_eq!(archive.upsert(&note("a", "x")).unwrap(), UpsertOutcome::Inserted);
        assert_eq!(archive.upsert(&note("a", "x")).unwrap(), UpsertOutcome::Unchanged);
        assert_eq!(archive.upsert(&note("a", "y")).unwrap(), UpsertOutcome::Updated);
        assert_eq!(archive.get::<Note>("a").unwrap().body, "y");
    }

    #[test]
    fn validation_failure_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let err = archive.upsert(&note("", "x")).unwrap_err();
        assert!(matches!(err, ArchiveError::ValidationFailed { .. }));
        assert_eq!(archive.count(RecordKind::Article), 0);
    }

    #[test]
    fn immutable_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let a = Frozen {
            id: "1".into(),
            body: "x".into(),
        };
        let b = Frozen {
            id: "1".into(),
            body: "y".into(),
        };
        archive.upsert(&a).unwrap();
        assert_eq!(archive.upsert(&a).unwrap(), UpsertOutcome::Unchanged);
        assert!(matches!(
            archive.upsert(&b),
            Err(ArchiveError::ImmutableConflict { .. })
        ));
    }

    #[test]
    fn blob_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let (digest, outcome) = archive.put_blob(b"hello").unwrap();
        assert_eq!(outcome, UpsertOutcome::Inserted);
        assert_eq!(archive.put_blob(b"hello").unwrap().1, UpsertOutcome::Unchanged);
        assert!(matches!(
            archive.put_blob_at(&digest, b"other"),
            Err(ArchiveError::ImmutableConflict { .. })
        ));
        assert_eq!(archive.read_blob(&digest).unwrap(), b"hello");
        assert!(archive.root().join("blobs").join(&digest[..2]).join(&digest).exists());
    }

    #[test]
    fn torn_blob_is_detected_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let (digest, _) = archive.put_blob(b"complete payload").unwrap();
        std::fs::write(archive.blobs().path_for(&digest), b"compl").unwrap();
        assert_eq!(archive.blobs().verify().unwrap(), vec![digest.clone()]);
        assert_eq!(
            archive.put_blob(b"complete payload").unwrap().1,
            UpsertOutcome::Inserted
        );
        assert!(archive.blobs().verify().unwrap().is_empty());
    }

    #[test]
    fn reopen_replays_latest_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let archive = Archive::open(dir.path()).unwrap();
            archive.upsert(&note("a", "1")).unwrap();
            archive.upsert(&note("b", "1")).unwrap();
            archive.upsert(&note("a", "2")).unwrap();
            archive.sync().unwrap();
        }
        let archive = Archive::open(dir.path()).unwrap();
        let notes: Vec<Note> = archive.scan_all().collect();
        assert_eq!(notes, vec![note("a", "2"), note("b", "1")]);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        {
            let archive = Archive::open(dir.path()).unwrap();
            archive.upsert(&note("a", "1")).unwrap();
            archive.upsert(&note("b", "1")).unwrap();
        }
        let path = log::log_path(&dir.path().join("archive"), RecordKind::Article);
        let bytes = fs::read(&path).unwrap();
        // chop the last record halfway through
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let keys: Vec<String> = archive.scan_all::<Note>().map(|n| n.id).collect();
        assert_eq!(keys, vec!["a"]);
        // the log is usable again after recovery
        archive.upsert(&note("c", "1")).unwrap();
        drop(archive);
        let archive = Archive::open(dir.path()).unwrap();
        assert_eq!(archive.count(RecordKind::Article), 2);
    }

    #[test]
    fn read_only_snapshot_leaves_torn_tail_alone() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Archive::open_read_only(dir.path()).is_err());
        {
            let archive = Archive::open(dir.path()).unwrap();
            archive.upsert(&note("a", "1")).unwrap();
            archive.upsert(&note("b", "1")).unwrap();
        }
        let path = log::log_path(&dir.path().join("archive"), RecordKind::Article);
        let bytes = fs::read(&path).unwrap();
        // a writer caught mid-append
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let snapshot = Archive::open_read_only(dir.path()).unwrap();
        assert!(snapshot.is_read_only());
        assert_eq!(snapshot.count(RecordKind::Article), 1);
        assert_eq!(fs::read(&path).unwrap().len(), bytes.len() - 10);
        assert!(matches!(snapshot.upsert(&note("c", "1")), Err(ArchiveError::ReadOnly)));
        assert!(matches!(snapshot.put_blob(b"x"), Err(ArchiveError::ReadOnly)));
        assert!(matches!(snapshot.write_meta("m", b"x"), Err(ArchiveError::ReadOnly)));
        snapshot.sync().unwrap();
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        {
            let archive = Archive::open(dir.path()).unwrap();
            archive.upsert(&note("a", "1")).unwrap();
            archive.upsert(&note("b", "1")).unwrap();
        }
        let path = log::log_path(&dir.path().join("archive"), RecordKind::Article);
        let text = fs::read_to_string(&path).unwrap();
        let broken = text.replacen("\"a\"", "\"z\"", 1);
        fs::write(&path, broken).unwrap();
        assert!(matches!(
            Archive::open(dir.path()),
            Err(ArchiveError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn scan_is_key_ordered_and_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        for id in ["c", "a", "b"] {
            archive.upsert(&note(id, id)).unwrap();
        }
        let first: Vec<Note> = archive.scan_all().collect();
        let second: Vec<Note> = archive.scan_all().collect();
        assert_eq!(first, second);
        assert_eq!(first.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        let filtered: Vec<Note> = archive.scan(|n: &Note| n.id != "b").collect();
        assert_eq!(filtered.len(), 2);
        assert_eq!(archive.scan_all::<Frozen>().count(), 0);
    }

    #[test]
    fn compact_keeps_live_records_only() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        for i in 0..20 {
            archive.upsert(&note("a", &i.to_string())).unwrap();
        }
        let report = archive.compact().unwrap();
        assert_eq!(report.records, 1);
        assert!(report.bytes_after < report.bytes_before);
        archive.upsert(&note("b", "x")).unwrap();
        drop(archive);
        let archive = Archive::open(dir.path()).unwrap();
        assert_eq!(archive.get::<Note>("a").unwrap().body, "19");
        assert_eq!(archive.count(RecordKind::Article), 2);
    }

    #[test]
    fn export_is_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        archive.upsert(&note("a", "1")).unwrap();
        archive.upsert(&note("b", "2")).unwrap();
        archive.put_blob(b"xyz").unwrap();
        let mut out = Vec::new();
        assert_eq!(archive.export_ndjson(RecordKind::Article, &mut out).unwrap(), 2);
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["id"], "a");
        let mut blobs = Vec::new();
        archive.export_ndjson(RecordKind::Blob, &mut blobs).unwrap();
        assert!(String::from_utf8(blobs).unwrap().contains("\"size\":3"));
    }

    #[test]
    fn meta_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        assert_eq!(archive.read_meta("seed").unwrap(), None);
        archive.write_meta("seed", b"42").unwrap();
        assert_eq!(archive.read_meta("seed").unwrap().unwrap(), b"42");
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in RecordKind::ALL {
            assert_eq!(RecordKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(RecordKind::parse("nope"), None);
    }
}
