//! Pairs manifest for the bench harness: one whitespace-separated line per
//! pair — `src_path tgt_path gt_pose_path src_idx tgt_idx`. Covers both
//! fragment-style and trajectory-style datasets with one schema. Paths must
//! not contain whitespace.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub gt_poses: PathBuf,
    pub src_idx: usize,
    pub tgt_idx: usize,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                format!("line {}", idx + 1),
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let idx_of = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::parse(path, format!("line {}", idx + 1), format!("bad index `{s}`"))
            })
        };
        // Relative paths resolve against the manifest's directory.
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            src: resolve(fields[0]),
            tgt: resolve(fields[1]),
            gt_poses: resolve(fields[2]),
            src_idx: idx_of(fields[3])?,
            tgt_idx: idx_of(fields[4])?,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.txt");
        std::fs::write(
            &path,
            "# comment\nclouds/a.ply clouds/b.ply poses.txt 0 10\n/abs/c.bin /abs/d.bin /abs/p.txt 3 4\n",
        )
        .unwrap();
        let entries = load_manifest(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].src, dir.path().join("clouds/a.ply"));
        assert_eq!(entries[0].tgt_idx, 10);
        assert_eq!(entries[1].src, PathBuf::from("/abs/c.bin"));
    }

    #[test]
    fn wrong_field_count_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.txt");
        std::fs::write(&path, "a b c\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }
}
