use std::collections::BTreeMap;

use anyhow::{Context, Result};
use serde::Serialize;
use structcore::manifest::RunManifest;
use structcore::metrics::DetectionMetrics;
use structcore::pipeline::Detector;
use structcore::structural::{ComponentMask, DistanceKind, StructCalibration};
use structcore::{Error, Label};

use super::eval::{detection, mean_std};
use super::{load_bundles, routing_label, score_entries};
use crate::args::{AblateArgs, AblationAxis};
use crate::records::emit;

#[derive(Debug, Serialize)]
struct VariantRow {
    variant: String,
    per_category: BTreeMap<String, DetectionMetrics>,
    mean: Option<DetectionMetrics>,
    std: Option<DetectionMetrics>,
    /// Mean minus the base row's mean.
    delta: Option<DetectionMetrics>,
}

#[derive(Debug, Serialize)]
struct AblationReport {
    axis: String,
    split: String,
    routing: String,
    base: VariantRow,
    variants: Vec<VariantRow>,
}

struct Scored {
    category: String,
    routed: String,
    base: f64,
    descriptor: structcore::structural::StructDescriptor,
    anomalous: bool,
}

fn row(
    variant: String,
    items: &[Scored],
    base_mean: Option<DetectionMetrics>,
    score: impl Fn(&Scored) -> Result<f64>,
) -> Result<VariantRow> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for it in items {
        let g = groups.entry(&it.category).or_default();
        g.0.push(score(it)?);
        g.1.push(it.anomalous);
    }
    let mut per_category = BTreeMap::new();
    for (cat, (s, y)) in groups {
        if let Some(m) = detection(cat, &variant, s, y)? {
            per_category.insert(cat.to_string(), m);
        }
    }
    let values: Vec<_> = per_category.values().copied().collect();
    let stats = mean_std(&values);
    let delta = match (stats, base_mean) {
        (Some((m, _)), Some(b)) => Some(DetectionMetrics {
            auroc: m.auroc - b.auroc,
            ap: m.ap - b.ap,
            f1_max: m.f1_max - b.f1_max,
        }),
        _ => None,
    };
    Ok(VariantRow {
        variant,
        per_category,
        mean: stats.map(|s| s.0),
        std: stats.map(|s| s.1),
        delta,
    })
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let detector = Detector::new(load_bundles(&args.bundles)?)?;
    let manifest = RunManifest::load(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let entries = manifest.split(&args.split)?;
    let scored = score_entries(&detector, entries, &args.routing, None)?;
    let items: Vec<Scored> = entries
        .iter()
        .zip(scored)
        .filter(|(_, (set, _))| set.label.is_some())
        .map(|(entry, (set, routed))| Scored {
            category: entry.category().to_string(),
            routed: routed.category_id,
            base: routed.score.base,
            descriptor: routed.score.descriptor,
            anomalous: set.label == Some(Label::Anomalous),
        })
        .collect();
    if items.is_empty() {
        return Err(Error::UndefinedMetric("no labeled images in the split".into()).into());
    }

    let base = row("base".into(), &items, None, |it| Ok(it.base))?;
    let variants: Vec<(String, ComponentMask, Option<DistanceKind>)> = match args.axis {
        AblationAxis::PhiSubsets => ComponentMask::non_empty_subsets()
            .into_iter()
            .map(|m| (m.to_string(), m, None))
            .collect(),
        AblationAxis::Distances => DistanceKind::ALL
            .into_iter()
            .map(|k| (k.name().to_string(), ComponentMask::ALL, Some(k)))
            .collect(),
    };
    let mut rows = Vec::with_capacity(variants.len());
    for (name, mask, kind) in variants {
        let mut refits: BTreeMap<&str, StructCalibration> = BTreeMap::new();
        for model in detector.models() {
            let calib = &model.bundle().calibration;
            refits.insert(model.category_id(), calib.refit(mask, kind.unwrap_or(calib.distance_kind))?);
        }
        rows.push(row(name, &items, base.mean, |it| {
            let calib = &refits[it.routed.as_str()];
            Ok(it.base + calib.lambda_auto * calib.distance(&it.descriptor)?)
        })?);
    }
    let report = AblationReport {
        axis: match args.axis {
            AblationAxis::PhiSubsets => "phi-subsets".into(),
            AblationAxis::Distances => "distances".into(),
        },
        split: args.split.clone(),
        routing: routing_label(&args.routing),
        base,
        variants: rows,
    };
    emit(&report, args.out.as_deref())
}
