use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{ArchiveError, Result};

/// Exclusive ownership of a data directory, held for the lifetime of the
/// value. The lock file records the owning pid; on Linux a lock whose owner
/// is no longer running (a killed daemon) is taken over.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(data_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = data_dir.as_ref().join("archive");
        fs::create_dir_all(&dir)?;
        let path = dir.join("LOCK");
        match Self::try_create(&path) {
            Err(ArchiveError::Locked(owner)) if owner_is_gone(&path) => {
                tracing::warn!(%owner, "removing stale lock");
                fs::remove_file(&path)?;
                Self::try_create(&path)
            }
            other => other,
        }
    }

    fn try_create(path: &Path) -> Result<Self> {
        let path = path.to_path_buf();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                f.sync_all()?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(&path).unwrap_or_default();
                Err(ArchiveError::Locked(format!("pid {}", owner.trim())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(target_os = "linux")]
fn owner_is_gone(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return false;
    };
    match text.trim().parse::<u32>() {
        Ok(pid) => !Path::new("/proc").join(pid.to_string()).exists(),
        Err(_) => false,
    }
}

#[cfg(not(target_os = "linux"))]
fn owner_is_gone(_lock: &Path) -> bool {
    false
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
