use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{ArchiveError, RecordKind, Result, UpsertOutcome};
use crate::digest::sha256_hex;

/// Content-addressed byte store: `<root>/<first-2-hex>/<digest>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        let prefix = digest.get(..2).unwrap_or("__");
        self.root.join(prefix).join(digest)
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).is_file()
    }

    pub fn put(&self, bytes: &[u8]) -> Result<(String, UpsertOutcome)> {
        let digest = sha256_hex(bytes);
        let outcome = self.put_at(&digest, bytes)?;
        Ok((digest, outcome))
    }

    pub fn put_at(&self, digest: &str, bytes: &[u8]) -> Result<UpsertOutcome> {
        let conflict = || ArchiveError::ImmutableConflict {
            kind: RecordKind::Blob,
            key: digest.to_string(),
        };
        if digest.len() < 2 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(ArchiveError::ValidationFailed {
                kind: RecordKind::Blob,
                key: digest.to_string(),
                reason: "digest must be hex".into(),
            });
        }
        let path = self.path_for(digest);
        if path.is_file() {
            let existing = fs::read(&path)?;
            if existing == bytes {
                return Ok(UpsertOutcome::Unchanged);
            }
            // a blob that no longer hashes to its name was torn by a crash; rewrite it
            if sha256_hex(&existing) == digest {
                return Err(conflict());
            }
            tracing::warn!(digest, "replacing torn blob");
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{digest}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            // No fsync per blob: names are content digests, so a torn write is
            // detectable (`verify`) and repaired by the next put of the same bytes.
            f.write_all(bytes)?;
        }
        fs::rename(&tmp, &path)?;
        Ok(UpsertOutcome::Inserted)
    }

    pub fn get(&self, digest: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.path_for(digest))?)
    }

    pub fn size(&self, digest: &str) -> Result<u64> {
        Ok(fs::metadata(self.path_for(digest))?.len())
    }

    /// All stored digests, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let Ok(shards) = fs::read_dir(&self.root) else {
            return Ok(out);
        };
        for shard in shards {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if !name.starts_with('.') {
                    out.push(name);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Digests whose stored bytes no longer hash to their name.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for digest in self.list()? {
            if sha256_hex(&self.get(&digest)?) != digest {
                bad.push(digest);
            }
        }
        Ok(bad)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}
