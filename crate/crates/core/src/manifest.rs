//! JSON run manifests listing feature files per split.
//!
//! ```json
//! {
//!   "train": [{"path": "bottle/train_000.scft", "category": "bottle"}],
//!   "test":  [{"path": "bottle/test_000.scft", "category": "bottle",
//!              "mask": "bottle/test_000.scmk"}]
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category used for entries that do not name one.
pub const DEFAULT_CATEGORY: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn category(&self) -> &str {
        self.category.as_deref().unwrap_or(DEFAULT_CATEGORY)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunManifest {
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest: RunManifest = serde_json::from_slice(&fs::read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for entry in manifest.splits.values_mut().flatten() {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            if let Some(mask) = &mut entry.mask {
                if mask.is_relative() {
                    *mask = base.join(&*mask);
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&[ManifestEntry]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("manifest has no {name:?} split")))
    }

    /// Entries of `split` grouped by category, in category order.
    pub fn by_category(&self, split: &str) -> Result<BTreeMap<String, Vec<&ManifestEntry>>> {
        let mut groups: BTreeMap<String, Vec<&ManifestEntry>> = BTreeMap::new();
        for entry in self.split(split)? {
            groups.entry(entry.category().to_string()).or_default().push(entry);
        }
        Ok(groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(
            &path,
            r#"{"train": [{"path": "a.scft", "category": "x"}, {"path": "/abs/b.scft"}],
                "test": [{"path": "c.scft", "mask": "c.scmk"}]}"#,
        )
        .unwrap();
        let m = RunManifest::load(&path).unwrap();
        let train = m.split("train").unwrap();
        assert_eq!(train[0].path, dir.path().join("a.scft"));
        assert_eq!(train[1].path, PathBuf::from("/abs/b.scft"));
        assert_eq!(train[1].category(), DEFAULT_CATEGORY);
        assert_eq!(m.split("test").unwrap()[0].mask, Some(dir.path().join("c.scmk")));
        assert!(m.split("val").is_err());
        let groups = m.by_category("train").unwrap();
        assert_eq!(groups.keys().collect::<Vec<_>>(), vec!["default", "x"]);
    }
}
