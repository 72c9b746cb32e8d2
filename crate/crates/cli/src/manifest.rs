//! `manifest.json`: every file under the output directory with its size and
//! SHA-256, sorted by path. No timestamps, so reruns compare byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_err, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Keyed by `/`-separated path relative to the output directory.
    pub files: BTreeMap<String, FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else if path.strip_prefix(root).map_or(true, |p| p != Path::new(MANIFEST)) {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    pub fn scan(root: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        walk(root, root, &mut paths)?;
        let mut files = BTreeMap::new();
        for p in paths {
            let bytes = std::fs::read(&p).map_err(io_err(&p))?;
            let rel = p.strip_prefix(root).expect("walked under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            files.insert(key, FileEntry { bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
        Ok(Self { files })
    }

    /// Rescans `root` and rewrites its manifest.
    pub fn write(root: &Path) -> Result<Self> {
        let m = Self::scan(root)?;
        let path = root.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(io_err(&path))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_nested_files_but_not_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("a/b")).unwrap();
        std::fs::write(dir.path().join("a/b/x.txt"), "abc").unwrap();
        std::fs::write(dir.path().join("top.csv"), "").unwrap();
        let m = Manifest::write(dir.path()).unwrap();
        assert_eq!(m.files.keys().collect::<Vec<_>>(), ["a/b/x.txt", "top.csv"]);
        assert_eq!(m.files["a/b/x.txt"].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(Manifest::write(dir.path()).unwrap(), m);
    }
}
