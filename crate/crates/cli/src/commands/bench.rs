use anyhow::{Context, Result};
use serde::Serialize;
use structcore::feature_store::load_bundle;
use structcore::manifest::{ManifestEntry, RunManifest};
use structcore::pipeline::{fit_category, CategoryModel, StageTimings};
use structcore::{Error, PatchFeatureSet, PipelineConfig};

use super::load_entry;
use crate::args::BenchArgs;
use crate::records::emit;

#[derive(Debug, Serialize)]
struct SweepPoint {
    coreset_ratio: f64,
    memory_bank_rows: usize,
    knn_ms: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    category: String,
    images: usize,
    memory_bank_rows: usize,
    warmup_passes: usize,
    mean: StageTimings,
    /// Sum of the three stages relative to the measured total.
    stage_share: f64,
    /// Whether a second measured pass reproduced every score exactly.
    scores_identical: bool,
    sweep: Vec<SweepPoint>,
}

fn entries_of<'a>(manifest: &'a RunManifest, split: &str, category: &str) -> Result<Vec<&'a ManifestEntry>> {
    let entries: Vec<_> = manifest
        .split(split)?
        .iter()
        .filter(|e| e.category() == category)
        .collect();
    if entries.is_empty() {
        return Err(Error::Empty("images of the bundle's category"))
            .with_context(|| format!("split {split:?} has no {category:?} images"));
    }
    Ok(entries)
}

/// Scores every image once, sequentially, returning mean timings and the
/// hybrid scores.
fn timed_pass(model: &CategoryModel, sets: &[PatchFeatureSet]) -> Result<(StageTimings, Vec<f64>)> {
    let mut sum = StageTimings::default();
    let mut scores = Vec::with_capacity(sets.len());
    for set in sets {
        let (score, t) = model.score_timed(set)?;
        sum.fuse_project_ms += t.fuse_project_ms;
        sum.knn_ms += t.knn_ms;
        sum.map_struct_ms += t.map_struct_ms;
        sum.total_ms += t.total_ms;
        scores.push(score.hybrid);
    }
    let n = sets.len() as f64;
    Ok((
        StageTimings {
            fuse_project_ms: sum.fuse_project_ms / n,
            knn_ms: sum.knn_ms / n,
            map_struct_ms: sum.map_struct_ms / n,
            total_ms: sum.total_ms / n,
        },
        scores,
    ))
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle).with_context(|| format!("loading {}", args.bundle.display()))?;
    let config: PipelineConfig = bundle.config.clone();
    let category = bundle.category_id.clone();
    let model = CategoryModel::new(bundle)?;
    let manifest = RunManifest::load(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let sets: Vec<PatchFeatureSet> = entries_of(&manifest, &args.split, &category)?
        .into_iter()
        .map(load_entry)
        .collect::<Result<_>>()?;

    for _ in 0..args.warmup {
        timed_pass(&model, &sets)?;
    }
    let (mean, first) = timed_pass(&model, &sets)?;
    let (_, second) = timed_pass(&model, &sets)?;
    let stages = mean.fuse_project_ms + mean.knn_ms + mean.map_struct_ms;

    let mut sweep = Vec::new();
    if let Some(ratios) = &args.sweep_ratios {
        let train: Vec<PatchFeatureSet> = entries_of(&manifest, "train", &category)?
            .into_iter()
            .map(load_entry)
            .collect::<Result<_>>()?;
        for &ratio in ratios {
            let cfg = PipelineConfig { coreset_ratio: ratio, ..config.clone() };
            let refit = CategoryModel::new(fit_category(&category, &train, &cfg)?)?;
            timed_pass(&refit, &sets)?;
            let (t, _) = timed_pass(&refit, &sets)?;
            sweep.push(SweepPoint {
                coreset_ratio: ratio,
                memory_bank_rows: refit.bundle().memory_bank.nrows(),
                knn_ms: t.knn_ms,
            });
        }
    }

    let report = BenchReport {
        category,
        images: sets.len(),
        memory_bank_rows: model.bundle().memory_bank.nrows(),
        warmup_passes: args.warmup,
        stage_share: if mean.total_ms > 0.0 { stages / mean.total_ms } else { 1.0 },
        mean,
        scores_identical: first == second,
        sweep,
    };
    emit(&report, args.out.as_deref())
}
