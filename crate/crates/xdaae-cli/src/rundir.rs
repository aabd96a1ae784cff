//! Run-directory management: exclusive lock, resolved-config snapshot, seed
//! record and a sha256 manifest of every artifact the run produced.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub struct RunDir {
    pub dir: PathBuf,
    lock_path: PathBuf,
}

impl RunDir {
    /// Create (or reuse) the directory and take its lock. A held lock means
    /// another process owns this directory.
    pub fn acquire(dir: &Path) -> Result<RunDir> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let lock_path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(_) => Ok(RunDir { dir: dir.to_path_buf(), lock_path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("output directory {} is locked by another run (remove {} if stale)", dir.display(), lock_path.display())
            }
            Err(e) => Err(e).with_context(|| format!("cannot lock {}", dir.display())),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text).with_context(|| format!("cannot write {name}"))
    }

    /// Record the resolved configuration and seed before any work starts.
    pub fn snapshot(&self, resolved_config: &str, seed: u64) -> Result<()> {
        self.write_text("config_resolved.txt", resolved_config)?;
        self.write_text("seed.txt", &format!("{seed}\n"))
    }

    /// Hash every artifact into manifest.txt (sha256, two-space, path),
    /// sorted by path.
    pub fn write_manifest(&self) -> Result<()> {
        let mut entries = Vec::new();
        let mut stack = vec![self.dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let entry = entry?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let name = path.strip_prefix(&self.dir)?.to_string_lossy().to_string();
                if name == ".lock" || name == "manifest.txt" {
                    continue;
                }
                let bytes = fs::read(&path)?;
                let hash = Sha256::digest(&bytes);
                entries.push(format!("{:x}  {}", hash, name));
            }
        }
        entries.sort();
        self.write_text("manifest.txt", &(entries.join("\n") + "\n"))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}
