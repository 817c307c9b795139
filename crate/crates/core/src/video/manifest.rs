//! Corpus manifests: UTF-8, one flat JSON record per line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clip_path: String,
    pub dataset_id: String,
    pub specialty_id: String,
    pub num_frames: u32,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Config(format!("manifest encode: {e}")))?,
        );
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        if !line.trim().is_empty() {
            let record: ManifestRecord =
                serde_json::from_str(line).map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    offset,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        offset += line.len() as u64 + 1;
    }
    validate_manifest(&records)?;
    Ok(records)
}

/// Every dataset must live under exactly one specialty.
pub fn validate_manifest(records: &[ManifestRecord]) -> Result<()> {
    let mut seen: std::collections::BTreeMap<&str, &str> = Default::default();
    for r in records {
        match seen.get(r.dataset_id.as_str()) {
            Some(&s) if s != r.specialty_id => {
                return Err(Error::Contract(format!(
                    "dataset {} appears under specialties {} and {}",
                    r.dataset_id, s, r.specialty_id
                )));
            }
            _ => {
                seen.insert(&r.dataset_id, &r.specialty_id);
            }
        }
    }
    Ok(())
}

/// Clip paths are stored relative to the manifest's directory.
pub fn resolve_clip_path(manifest_path: &Path, record: &ManifestRecord) -> PathBuf {
    let p = Path::new(&record.clip_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}
