//! Manifests: one sample per line,
//! `sample_id TAB blob_path TAB T TAB fps TAB space-separated gloss ids`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub blob_path: PathBuf,
    pub frames: usize,
    pub fps: f64,
    pub glosses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative blob paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |d: &str| Error::format("manifest", format!("line {}: {d}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(&format!("expected 5 tab-separated columns, got {}", cols.len())));
            }
            let frames: usize = cols[2].parse().map_err(|_| bad("frame count is not an integer"))?;
            if frames == 0 {
                return Err(bad("frame count must be at least 1"));
            }
            let fps: f64 = cols[3].parse().map_err(|_| bad("fps is not a number"))?;
            let glosses = cols[4]
                .split_whitespace()
                .map(|g| g.parse::<usize>().map_err(|_| bad("gloss id is not an integer")))
                .collect::<Result<Vec<_>>>()?;
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                blob_path: PathBuf::from(cols[1]),
                frames,
                fps,
                glosses,
            });
        }
        Ok(Manifest { entries, root: root.to_path_buf() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let ids: Vec<String> = e.glosses.iter().map(usize::to_string).collect();
            writeln!(s, "{}\t{}\t{}\t{}\t{}", e.id, e.blob_path.display(), e.frames, e.fps, ids.join(" ")).unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.blob_path.is_absolute() {
            entry.blob_path.clone()
        } else {
            self.root.join(&entry.blob_path)
        }
    }

    /// Checks every gloss id against a vocabulary of `vocab_len` glosses.
    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        for e in &self.entries {
            if let Some(&bad) = e.glosses.iter().find(|&&g| g == 0 || g > vocab_len) {
                return Err(Error::Sample {
                    sample: e.id.clone(),
                    detail: format!("gloss id {bad} outside vocabulary of {vocab_len}"),
                });
            }
        }
        Ok(())
    }
}
