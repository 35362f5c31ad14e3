//! Output manifest: a hashed inventory of every file a run wrote.
//!
//! Each entry records the file's run-relative path (forward slashes on every
//! platform), its SHA-256 digest, and its size. Re-running the same
//! configuration with the same seed reproduces every file byte for byte, so
//! two manifests from identical runs are themselves identical — the manifest
//! doubles as a determinism check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Current [`Manifest::format_version`].
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Name of the manifest file inside the output directory.
pub const MANIFEST_FILE_NAME: &str = "manifest.json";

/// SHA-256 of `bytes` as lowercase hex.
#[must_use]
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory, with forward slashes.
    pub path: String,
    /// SHA-256 of the file contents, lowercase hex.
    pub sha256: String,
    /// File size in bytes.
    pub bytes: u64,
    /// What the file holds (`record`, `analysis`, `report`, `config`, …).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Qubit frequency of the sweep point this file belongs to, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_hz: Option<f64>,
    /// Seed the file's contents were generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// The inventory, kept sorted by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            entries: Vec::new(),
        }
    }
}

impl Manifest {
    /// Load the manifest from `dir`, or start an empty one if none exists.
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE_NAME);
        if !path.is_file() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("manifest {}: {e}", path.display())))?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "manifest format version {} is not the supported {MANIFEST_FORMAT_VERSION}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    /// Insert or replace entries by path, keeping the inventory sorted.
    pub fn upsert(&mut self, new_entries: Vec<ManifestEntry>) {
        let mut by_path: BTreeMap<String, ManifestEntry> = self
            .entries
            .drain(..)
            .map(|e| (e.path.clone(), e))
            .collect();
        for e in new_entries {
            by_path.insert(e.path.clone(), e);
        }
        self.entries = by_path.into_values().collect();
    }

    /// Write the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE_NAME), text.as_bytes())?;
        Ok(())
    }
}

/// Writes files under a fixed root and accumulates their manifest entries.
pub struct OutputWriter {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputWriter {
    /// Create the root directory (and parents) if needed.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    #[must_use]
    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `bytes` to `relative` (forward-slash path below the root),
    /// creating intermediate directories, and record its manifest entry.
    pub fn write(&mut self, relative: &str, bytes: &[u8], kind: &str) -> Result<()> {
        self.write_tagged(relative, bytes, kind, None, None)
    }

    /// [`OutputWriter::write`] with the sweep-point frequency and seed
    /// attached to the manifest entry.
    pub fn write_tagged(
        &mut self,
        relative: &str,
        bytes: &[u8],
        kind: &str,
        freq_hz: Option<f64>,
        seed: Option<u64>,
    ) -> Result<()> {
        let full = self.root.join(relative);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&full, bytes)?;
        self.entries.push(ManifestEntry {
            path: relative.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            kind: Some(kind.to_string()),
            freq_hz,
            seed,
        });
        Ok(())
    }

    /// Number of files written so far.
    #[must_use]
    pub fn files_written(&self) -> usize {
        self.entries.len()
    }

    /// Merge the accumulated entries into the on-disk manifest and save it.
    /// Returns the total entry count after the merge.
    pub fn finalize(self) -> Result<usize> {
        let mut manifest = Manifest::load_or_default(&self.root)?;
        manifest.upsert(self.entries);
        manifest.save(&self.root)?;
        Ok(manifest.entries.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_the_known_empty_and_abc_digests() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn writer_records_every_file_and_merge_replaces_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write("b/data.csv", b"x,y\n1,2\n", "analysis").unwrap();
        w.write("a.json", b"{}", "report").unwrap();
        assert_eq!(w.finalize().unwrap(), 2);

        let manifest = Manifest::load_or_default(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        // Sorted by path.
        assert_eq!(manifest.entries[0].path, "a.json");
        assert_eq!(manifest.entries[1].path, "b/data.csv");
        assert_eq!(manifest.entries[0].bytes, 2);

        // A second run replaces entries rather than duplicating them.
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write("a.json", b"{\"v\":1}", "report").unwrap();
        assert_eq!(w.finalize().unwrap(), 2);
        let manifest = Manifest::load_or_default(dir.path()).unwrap();
        assert_eq!(manifest.entries[0].bytes, 7);
        assert_eq!(manifest.entries[1].path, "b/data.csv");
    }

    #[test]
    fn identical_writes_produce_identical_manifests() {
        let make = || {
            let dir = tempfile::tempdir().unwrap();
            let mut w = OutputWriter::create(dir.path()).unwrap();
            w.write_tagged("r/p_0000.json", b"{\"z\": 0.25}", "record", Some(2.5e8), Some(42))
                .unwrap();
            w.finalize().unwrap();
            let manifest = Manifest::load_or_default(dir.path()).unwrap();
            serde_json::to_string(&manifest).unwrap()
        };
        assert_eq!(make(), make());
    }
}
