//! Score record files exchanged between `score`, `eval` and `synth`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use structcore::structural::StructDescriptor;
use structcore::{Label, PipelineConfig};

/// One scored image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub path: PathBuf,
    /// Category listed in the manifest.
    pub category: String,
    /// Category whose bank scored the image.
    pub routed_category: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub route_scores: Vec<(String, f64)>,
    pub label: Option<Label>,
    pub s_base: f64,
    pub s_struct: f64,
    pub s_hyb: f64,
    pub lambda: f64,
    pub descriptor: StructDescriptor,
    pub tau_base: f64,
    pub tau_hyb: f64,
    pub anomalous_base: bool,
    pub anomalous_hyb: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

/// Provenance of one fitted category used while scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub lambda_auto: f64,
    pub degenerate: bool,
    pub memory_bank_rows: usize,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub split: String,
    /// `auto`, `manifest` or `fixed:<category>`.
    pub routing: String,
    pub threshold_quantile: f64,
    pub lambda_fixed: Option<f64>,
    pub categories: Vec<CategorySummary>,
    /// Share of routed images that landed in their manifest category.
    pub routing_accuracy: Option<f64>,
    pub records: Vec<ScoreRecord>,
}

impl ScoreReport {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let report = serde_json::from_slice(&bytes)
            .map_err(structcore::Error::from)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(report)
    }
}

/// Writes pretty JSON to `out`, or to stdout when `out` is `None`.
pub fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// File-name-safe version of an image or category id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}
