use std::path::{Path, PathBuf};

use anyhow::Result;
use structcore::feature_store::write_feature_file;
use structcore::manifest::{ManifestEntry, RunManifest};
use structcore::map::{export_map, pool_max};
use structcore::structural::{describe, fit_calibration, CalibrationSettings};
use structcore::synth::{FeatureFixture, StructuralGapFixture};
use structcore::{Label, PipelineConfig};

use crate::args::{SynthArgs, SynthKind};
use crate::records::{emit, CategorySummary, ScoreRecord, ScoreReport};

/// Category name given to the structural-gap maps.
pub const STRUCTURAL_GAP_CATEGORY: &str = "structural-gap";

pub fn run(args: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    match args.kind {
        SynthKind::Features => features(args),
        SynthKind::StructuralGap => structural_gap(&args.out_dir, args.seed),
    }
}

/// Writes feature files under `<split>/<category>/`, a manifest with
/// relative paths and the matching pipeline configuration.
fn features(args: &SynthArgs) -> Result<()> {
    let mut fixture = FeatureFixture { seed: args.seed, ..FeatureFixture::default() };
    if let Some(n) = args.categories {
        fixture.categories = n;
    }
    let mut manifest = RunManifest::default();
    for image in fixture.generate()? {
        let split = if image.train { "train" } else { "test" };
        let rel = PathBuf::from(split)
            .join(&image.category)
            .join(format!("{}.scft", image.features.image_id));
        let path = args.out_dir.join(&rel);
        std::fs::create_dir_all(path.parent().unwrap())?;
        write_feature_file(&image.features, &path)?;
        manifest.splits.entry(split.into()).or_default().push(ManifestEntry {
            path: rel,
            category: Some(image.category),
            mask: None,
        });
    }
    manifest.save(args.out_dir.join("manifest.json"))?;
    emit(&fixture.pipeline_config(), Some(&args.out_dir.join("config.json")))
}

/// Writes the fixture maps, fits the structural calibration on the train
/// maps and scores the test maps into `scores.json`, readable by `eval`.
fn structural_gap(out_dir: &Path, seed: u64) -> Result<()> {
    let fixture = StructuralGapFixture { seed, ..StructuralGapFixture::default() };
    let maps = fixture.generate()?;
    let config = PipelineConfig::default();
    let settings = CalibrationSettings::from_config(&config);

    let train_dir = out_dir.join("train");
    let test_dir = out_dir.join("test");
    std::fs::create_dir_all(&train_dir)?;
    std::fs::create_dir_all(&test_dir)?;
    for (i, m) in maps.train.iter().enumerate() {
        export_map(m, &train_dir, &format!("train_{i:03}"))?;
    }
    let base: Vec<f64> = maps.train.iter().map(|m| pool_max(m) as f64).collect();
    let calib = fit_calibration(&maps.train, &base, &settings)?;
    let (tau_base, tau_hyb) = calib.train_thresholds(0.995, calib.lambda_auto);

    let mut records = Vec::with_capacity(maps.test.len());
    for (i, (map, anomalous)) in maps.test.iter().enumerate() {
        let stem = format!("test_{i:03}");
        export_map(map, &test_dir, &stem)?;
        let map_path = test_dir.join(format!("{stem}.f32"));
        let descriptor = describe(map, calib.topk_ratio);
        let s_base = pool_max(map) as f64;
        let s_struct = calib.distance(&descriptor)?;
        let s_hyb = s_base + calib.lambda_auto * s_struct;
        records.push(ScoreRecord {
            image_id: stem,
            path: map_path.clone(),
            category: STRUCTURAL_GAP_CATEGORY.into(),
            routed_category: STRUCTURAL_GAP_CATEGORY.into(),
            route_scores: Vec::new(),
            label: Some(if *anomalous { Label::Anomalous } else { Label::Good }),
            s_base,
            s_struct,
            s_hyb,
            lambda: calib.lambda_auto,
            descriptor,
            tau_base,
            tau_hyb,
            anomalous_base: s_base > tau_base,
            anomalous_hyb: s_hyb > tau_hyb,
            map_path: Some(map_path),
            mask_path: None,
        });
    }
    let report = ScoreReport {
        split: "test".into(),
        routing: format!("fixed:{STRUCTURAL_GAP_CATEGORY}"),
        threshold_quantile: 0.995,
        lambda_fixed: None,
        categories: vec![CategorySummary {
            category: STRUCTURAL_GAP_CATEGORY.into(),
            lambda_auto: calib.lambda_auto,
            degenerate: calib.degenerate,
            memory_bank_rows: 0,
            config,
        }],
        routing_accuracy: None,
        records,
    };
    emit(&calib, Some(&out_dir.join("calibration.json")))?;
    emit(&report, Some(&out_dir.join("scores.json")))
}
