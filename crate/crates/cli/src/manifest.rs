//! Run manifests: inputs, overrides, versions and content digests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Git object id of `bytes` as a blob in a SHA-256 repository.
pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(blob_digest(&bytes))
}

fn files_under(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, label: &str, path: &Path) -> anyhow::Result<()> {
        let digest = file_digest(path)?;
        self.set(&format!("input.{label}"), format!("{} sha256:{digest}", path.display()));
        Ok(())
    }

    /// Digests every file already written below `out` and saves the manifest there.
    pub fn write(mut self, out: &Path) -> anyhow::Result<()> {
        for path in files_under(out)? {
            let rel = path.strip_prefix(out).unwrap_or(&path);
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            let digest = file_digest(&path)?;
            self.set(&format!("output.{}", rel.display()), format!("sha256:{digest}"));
        }
        let mut text = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(text, "{k} = {v}");
        }
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_sha256_object_ids() {
        // `git init --object-format=sha256; printf '' | git hash-object --stdin`
        assert_eq!(
            blob_digest(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        // `echo hello | git hash-object --stdin`
        assert_eq!(
            blob_digest(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
