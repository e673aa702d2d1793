use std::collections::BTreeMap;

use anyhow::{Context, Result};
use structcore::feature_store::write_mask_file;
use structcore::manifest::RunManifest;
use structcore::map::export_map;
use structcore::pipeline::Detector;
use structcore::Error;

use super::{load_bundles, routing_label, score_entries};
use crate::args::ScoreArgs;
use crate::records::{emit, file_stem, CategorySummary, ScoreRecord, ScoreReport};

pub fn run(args: &ScoreArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold_quantile) {
        return Err(Error::Config(format!(
            "threshold quantile {} not in [0, 1]",
            args.threshold_quantile
        ))
        .into());
    }
    if let Some(l) = args.lambda_fixed {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("fixed lambda {l} must be finite and >= 0")).into());
        }
    }
    let detector = Detector::new(load_bundles(&args.bundles)?)?;
    let manifest = RunManifest::load(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let entries = manifest.split(&args.split)?;
    if let Some(c) = &args.routing.category {
        detector.model(c)?;
    }

    let scored = score_entries(&detector, entries, &args.routing, args.lambda_fixed)?;

    let mut thresholds = BTreeMap::new();
    let mut categories = Vec::new();
    for model in detector.models() {
        let calib = &model.bundle().calibration;
        let lambda = args.lambda_fixed.unwrap_or(calib.lambda_auto);
        thresholds.insert(
            model.category_id().to_string(),
            (lambda, calib.train_thresholds(args.threshold_quantile, lambda)),
        );
        categories.push(CategorySummary {
            category: model.category_id().to_string(),
            lambda_auto: calib.lambda_auto,
            degenerate: calib.degenerate,
            memory_bank_rows: model.bundle().memory_bank.nrows(),
            config: model.config().clone(),
        });
    }

    if let Some(dir) = &args.maps_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = Vec::with_capacity(scored.len());
    for (i, (entry, (set, routed))) in entries.iter().zip(&scored).enumerate() {
        let (lambda, (tau_base, tau_hyb)) = thresholds[&routed.category_id];
        let s = &routed.score;
        let (mut map_path, mut mask_path) = (None, None);
        if let Some(dir) = &args.maps_dir {
            let stem = format!("{i:05}_{}", file_stem(&set.image_id));
            export_map(&s.map, dir, &stem)?;
            map_path = Some(dir.join(format!("{stem}.f32")));
            if let Some(mask) = &set.pixel_mask {
                let path = dir.join(format!("{stem}.scmk"));
                write_mask_file(mask, &path)?;
                mask_path = Some(path);
            }
        }
        records.push(ScoreRecord {
            image_id: set.image_id.clone(),
            path: entry.path.clone(),
            category: entry.category().to_string(),
            routed_category: routed.category_id.clone(),
            route_scores: routed.route.as_ref().map(|r| r.scores.clone()).unwrap_or_default(),
            label: set.label,
            s_base: s.base,
            s_struct: s.structural,
            s_hyb: s.hybrid,
            lambda,
            descriptor: s.descriptor,
            tau_base,
            tau_hyb,
            anomalous_base: s.base > tau_base,
            anomalous_hyb: s.hybrid > tau_hyb,
            map_path,
            mask_path,
        });
    }

    let routing_accuracy = (!args.routing.no_routing && entries.iter().all(|e| e.category.is_some()) && !records.is_empty())
        .then(|| {
            let hits = records.iter().filter(|r| r.routed_category == r.category).count();
            hits as f64 / records.len() as f64
        });
    if let Some(acc) = routing_accuracy {
        log::info!("routing accuracy {:.4}", acc);
    }

    let report = ScoreReport {
        split: args.split.clone(),
        routing: routing_label(&args.routing),
        threshold_quantile: args.threshold_quantile,
        lambda_fixed: args.lambda_fixed,
        categories,
        routing_accuracy,
        records,
    };
    emit(&report, args.out.as_deref())
}
