//! Level manifest: per-SST metadata plus an append-only edit log that is
//! replayed at open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-SST metadata carried by the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub file_id: u64,
    pub level: usize,
    #[serde(with = "bytes_hex")]
    pub min_key: Vec<u8>,
    #[serde(with = "bytes_hex")]
    pub max_key: Vec<u8>,
    pub size_bytes: u64,
    pub entry_count: u64,
    /// Popularity score assigned at SST creation.
    pub score: i64,
    pub tier: usize,
}

impl TableMeta {
    pub fn file_name(&self) -> String {
        format!("{}.sst", self.file_id)
    }

    pub fn overlaps(&self, min: &[u8], max: &[u8]) -> bool {
        self.min_key.as_slice() <= max && self.max_key.as_slice() >= min
    }

    pub fn covers(&self, key: &[u8]) -> bool {
        self.min_key.as_slice() <= key && key <= self.max_key.as_slice()
    }
}

/// One atomic manifest change.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VersionEdit {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added: Vec<TableMeta>,
    /// (level, file id) pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<(usize, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seqno: Option<u64>,
}

/// In-memory view of the tree: one file list per level. Levels >= 1 are
/// kept sorted by min key with pairwise-disjoint ranges; L0 files overlap
/// and are listed in creation order.
#[derive(Debug, Clone)]
pub struct Levels {
    pub levels: Vec<Vec<TableMeta>>,
}

impl Levels {
    pub fn new(level_count: usize) -> Levels {
        Levels {
            levels: vec![Vec::new(); level_count],
        }
    }

    pub fn apply(&mut self, edit: &VersionEdit) {
        for (level, file_id) in &edit.removed {
            self.levels[*level].retain(|t| t.file_id != *file_id);
        }
        for meta in &edit.added {
            self.levels[meta.level].push(meta.clone());
        }
        for level in self.levels.iter_mut().skip(1) {
            level.sort_by(|a, b| a.min_key.cmp(&b.min_key));
        }
    }

    pub fn level_bytes(&self, level: usize) -> u64 {
        self.levels[level].iter().map(|t| t.size_bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        (0..self.levels.len()).map(|l| self.level_bytes(l)).sum()
    }

    pub fn all_files(&self) -> impl Iterator<Item = &TableMeta> {
        self.levels.iter().flatten()
    }
}

/// Append-only log of version edits, one JSON object per line.
pub struct ManifestLog {
    file: File,
}

pub const MANIFEST_NAME: &str = "MANIFEST";

impl ManifestLog {
    /// Open (creating if needed) and replay the manifest in `dir`.
    /// Returns the log handle, the reconstructed levels, the largest file
    /// id seen, and the last committed seqno.
    pub fn open(dir: &Path, level_count: usize) -> Result<(ManifestLog, Levels, u64, u64)> {
        let path = dir.join(MANIFEST_NAME);
        let mut levels = Levels::new(level_count);
        let mut max_file_id = 0u64;
        let mut last_seqno = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let edit: VersionEdit = serde_json::from_str(&line).map_err(|e| {
                    Error::ManifestCorrupt(format!("line {}: {e}", n + 1))
                })?;
                for meta in &edit.added {
                    if meta.level >= level_count {
                        return Err(Error::ManifestCorrupt(format!(
                            "file {} on level {} (level_count {})",
                            meta.file_id, meta.level, level_count
                        )));
                    }
                    max_file_id = max_file_id.max(meta.file_id);
                }
                if let Some(s) = edit.last_seqno {
                    last_seqno = last_seqno.max(s);
                }
                levels.apply(&edit);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((ManifestLog { file }, levels, max_file_id, last_seqno))
    }

    pub fn append(&mut self, edit: &VersionEdit) -> Result<()> {
        let mut line = serde_json::to_string(edit)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

mod bytes_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let mut out = String::with_capacity(bytes.len() * 2);
        for b in bytes {
            out.push_str(&format!("{b:02x}"));
        }
        s.serialize_str(&out)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd hex length"));
        }
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn meta(file_id: u64, level: usize, min: &[u8], max: &[u8]) -> TableMeta {
        TableMeta {
            file_id,
            level,
            min_key: min.to_vec(),
            max_key: max.to_vec(),
            size_bytes: 100,
            entry_count: 10,
            score: -10,
            tier: 0,
        }
    }

    #[test]
    fn replay_reconstructs_levels() {
        let dir = tempdir().unwrap();
        {
            let (mut log, _, _, _) = ManifestLog::open(dir.path(), 5).unwrap();
            log.append(&VersionEdit {
                added: vec![meta(1, 0, b"a", b"m"), meta(2, 1, b"n", b"z")],
                removed: vec![],
                last_seqno: Some(42),
            })
            .unwrap();
            log.append(&VersionEdit {
                added: vec![meta(3, 1, b"a", b"m")],
                removed: vec![(0, 1)],
                last_seqno: Some(99),
            })
            .unwrap();
        }
        let (_, levels, max_id, last_seqno) = ManifestLog::open(dir.path(), 5).unwrap();
        assert!(levels.levels[0].is_empty());
        // L1 sorted by min_key
        assert_eq!(
            levels.levels[1].iter().map(|t| t.file_id).collect::<Vec<_>>(),
            vec![3, 2]
        );
        assert_eq!(max_id, 3);
        assert_eq!(last_seqno, 99);
    }

    #[test]
    fn corrupt_manifest_is_an_error() {
        let dir = tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST_NAME), "not json\n").unwrap();
        assert!(matches!(
            ManifestLog::open(dir.path(), 5),
            Err(Error::ManifestCorrupt(_))
        ));
    }
}
