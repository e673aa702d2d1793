//! Command-line argument definitions and effective-config assembly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use structcore::structural::{ComponentMask, DistanceKind};
use structcore::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "structcore", version, about = "Structure-aware image anomaly scoring")]
pub struct Cli {
    /// Worker threads (defaults to one per core). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model bundle per category from the train split.
    Fit(FitArgs),
    /// Score a split against fitted bundles.
    Score(ScoreArgs),
    /// Compute detection and localization metrics from score records.
    Eval(EvalArgs),
    /// Re-fit the structural calibration per variant and compare.
    Ablate(AblateArgs),
    /// Time the scoring stages of one bundle.
    Bench(BenchArgs),
    /// Generate a synthetic fixture.
    Synth(SynthArgs),
}

/// Pipeline settings. Flags override `--config`, which overrides defaults.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON file holding a (partial) pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated backbone layer ids, e.g. -1,-3,-6,-9,-12.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub layer_ids: Option<Vec<i32>>,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    /// Seed of the random projection.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub coreset_ratio: Option<f64>,
    #[arg(long)]
    pub coreset_proxy_dim: Option<usize>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long)]
    pub topk_ratio: Option<f64>,
    #[arg(long)]
    pub routing_bank_size: Option<usize>,
    /// Active descriptor components, e.g. "sigma,topk,tv".
    #[arg(long)]
    pub phi: Option<ComponentMask>,
    /// diag-mahalanobis, l1-std, chebyshev-std, manhattan, euclidean,
    /// chebyshev or cosine.
    #[arg(long)]
    pub struct_distance: Option<DistanceKind>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output map size as HxW, e.g. 392x392.
    #[arg(long, value_parser = parse_size)]
    pub map_size: Option<(usize, usize)>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(h)?, parse(w)?))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value {
                    cfg.$field = v;
                }
            };
        }
        set!(layer_ids, self.layer_ids.clone());
        set!(proj_out_dim, self.proj_dim);
        set!(proj_seed, self.seed);
        set!(coreset_ratio, self.coreset_ratio);
        set!(knn_k, self.knn_k);
        set!(blur_sigma, self.blur_sigma);
        set!(topk_ratio, self.topk_ratio);
        set!(routing_bank_size, self.routing_bank_size);
        set!(active_components, self.phi);
        set!(struct_distance, self.struct_distance);
        set!(epsilon, self.epsilon);
        if self.coreset_proxy_dim.is_some() {
            cfg.coreset_proxy_dim = self.coreset_proxy_dim;
        }
        if self.map_size.is_some() {
            cfg.output_map_size = self.map_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<PipelineConfig> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = serde_json::from_slice(&bytes)
        .map_err(structcore::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// How images are bound to categories when scoring.
#[derive(Debug, Args, Clone)]
pub struct RoutingArgs {
    /// Skip routing. With `--category` every image is scored against that
    /// category; without it each image uses its manifest category.
    #[arg(long)]
    pub no_routing: bool,
    #[arg(long, requires = "no_routing")]
    pub category: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of fitted `.scmb` bundles.
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub routing: RoutingArgs,
    /// Train-good quantile used for the per-category decision thresholds.
    #[arg(long, default_value_t = 0.995)]
    pub threshold_quantile: f64,
    /// Replace every category's automatic weight with this value.
    #[arg(long)]
    pub lambda_fixed: Option<f64>,
    /// Write each anomaly map (and its mask, if any) here.
    #[arg(long)]
    pub maps_dir: Option<PathBuf>,
    /// Score records file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score records written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationAxis {
    PhiSubsets,
    Distances,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long, value_enum)]
    pub axis: AblationAxis,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub routing: RoutingArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// A fitted `.scmb` bundle.
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Untimed passes over the images before the measured one.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Re-fit the bundle's category at each coreset ratio (train split)
    /// and report the kNN time per ratio.
    #[arg(long, value_delimiter = ',')]
    pub sweep_ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Anomaly maps whose anomalies differ in structure, not in their peak.
    StructuralGap,
    /// Multi-category patch features with block defects.
    Features,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of categories (features only).
    #[arg(long)]
    pub categories: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("392x384").unwrap(), (392, 384));
        assert!(parse_size("392").is_err());
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"knn_k": 9, "blur_sigma": 2.0}"#).unwrap();
        let args = ConfigArgs {
            config: Some(path),
            knn_k: Some(3),
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.knn_k, 3);
        assert_eq!(cfg.blur_sigma, 2.0);
        assert_eq!(cfg.proj_out_dim, 512);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
