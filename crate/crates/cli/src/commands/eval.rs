use std::collections::BTreeMap;

use anyhow::Result;
use log::warn;
use serde::Serialize;
use structcore::feature_store::read_mask_file;
use structcore::map::import_map;
use structcore::metrics::{pixel_auroc, DetectionMetrics, ScoredSet};
use structcore::{Error, Label};

use crate::args::EvalArgs;
use crate::records::{emit, ScoreRecord, ScoreReport};

/// Detection metrics of one score column, or `None` with a warning when the
/// labels make them undefined.
pub fn detection(category: &str, column: &str, scores: Vec<f64>, labels: Vec<bool>) -> Result<Option<DetectionMetrics>> {
    match DetectionMetrics::compute(&ScoredSet::new(scores, labels)?) {
        Ok(m) => Ok(Some(m)),
        Err(Error::UndefinedMetric(why)) => {
            warn!("category {category:?}, {column}: undefined ({why}); excluded from the mean");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Unweighted mean (and population std) over the defined entries.
pub fn mean_std(values: &[DetectionMetrics]) -> Option<(DetectionMetrics, DetectionMetrics)> {
    if values.is_empty() {
        return None;
    }
    let stat = |f: fn(&DetectionMetrics) -> f64| {
        let v: Vec<f64> = values.iter().map(f).collect();
        structcore::structural::mean_std(&v)
    };
    let (a, sa) = stat(|m| m.auroc);
    let (p, sp) = stat(|m| m.ap);
    let (f, sf) = stat(|m| m.f1_max);
    Some((
        DetectionMetrics { auroc: a, ap: p, f1_max: f },
        DetectionMetrics { auroc: sa, ap: sp, f1_max: sf },
    ))
}

/// Labeled records grouped by manifest category.
pub fn labeled_by_category(records: &[ScoreRecord]) -> BTreeMap<&str, Vec<&ScoreRecord>> {
    let mut groups: BTreeMap<&str, Vec<&ScoreRecord>> = BTreeMap::new();
    let mut unlabeled = 0usize;
    for r in records {
        if r.label.is_some() {
            groups.entry(r.category.as_str()).or_default().push(r);
        } else {
            unlabeled += 1;
        }
    }
    if unlabeled > 0 {
        warn!("{unlabeled} records carry no label and are ignored");
    }
    groups
}

fn labels(records: &[&ScoreRecord]) -> Vec<bool> {
    records.iter().map(|r| r.label == Some(Label::Anomalous)).collect()
}

#[derive(Debug, Serialize)]
struct CategoryRow {
    category: String,
    images: usize,
    anomalous: usize,
    base: Option<DetectionMetrics>,
    structural: Option<DetectionMetrics>,
    hybrid: Option<DetectionMetrics>,
    pixel_auroc: Option<f64>,
}

#[derive(Debug, Serialize)]
struct MeanRow {
    categories: usize,
    base: Option<DetectionMetrics>,
    structural: Option<DetectionMetrics>,
    hybrid: Option<DetectionMetrics>,
    pixel_auroc: Option<f64>,
    pixel_categories: usize,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    split: String,
    routing: String,
    routing_accuracy: Option<f64>,
    categories: Vec<CategoryRow>,
    mean: MeanRow,
}

fn pixel_metric(category: &str, records: &[&ScoreRecord]) -> Result<Option<f64>> {
    let pairs: Vec<_> = records
        .iter()
        .filter_map(|r| Some((r.map_path.as_ref()?, r.mask_path.as_ref()?)))
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut maps = Vec::with_capacity(pairs.len());
    let mut masks = Vec::with_capacity(pairs.len());
    for (map, mask) in pairs {
        maps.push(import_map(map)?);
        masks.push(read_mask_file(mask)?);
    }
    let map_refs: Vec<_> = maps.iter().collect();
    let mask_refs: Vec<_> = masks.iter().collect();
    match pixel_auroc(&map_refs, &mask_refs) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(why)) => {
            warn!("category {category:?}, pixel AUROC undefined ({why})");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let report = ScoreReport::load(&args.scores)?;
    let groups = labeled_by_category(&report.records);
    if groups.is_empty() {
        return Err(Error::UndefinedMetric("no labeled records to evaluate".into()).into());
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (category, records) in &groups {
        let y = labels(records);
        let column = |name: &str, f: fn(&ScoreRecord) -> f64| {
            detection(category, name, records.iter().map(|r| f(r)).collect(), y.clone())
        };
        rows.push(CategoryRow {
            category: category.to_string(),
            images: records.len(),
            anomalous: y.iter().filter(|&&l| l).count(),
            base: column("base", |r| r.s_base)?,
            structural: column("struct", |r| r.s_struct)?,
            hybrid: column("hybrid", |r| r.s_hyb)?,
            pixel_auroc: pixel_metric(category, records)?,
        });
    }
    let mean_of = |f: fn(&CategoryRow) -> Option<DetectionMetrics>| {
        let defined: Vec<_> = rows.iter().filter_map(f).collect();
        mean_std(&defined).map(|(m, _)| m)
    };
    let pixel: Vec<f64> = rows.iter().filter_map(|r| r.pixel_auroc).collect();
    let mean = MeanRow {
        categories: rows.iter().filter(|r| r.base.is_some()).count(),
        base: mean_of(|r| r.base),
        structural: mean_of(|r| r.structural),
        hybrid: mean_of(|r| r.hybrid),
        pixel_auroc: (!pixel.is_empty()).then(|| pixel.iter().sum::<f64>() / pixel.len() as f64),
        pixel_categories: pixel.len(),
    };
    if mean.base.is_none() {
        return Err(Error::UndefinedMetric("every category has a single class".into()).into());
    }
    let out = EvalReport {
        split: report.split,
        routing: report.routing,
        routing_accuracy: report.routing_accuracy,
        categories: rows,
        mean,
    };
    emit(&out, args.out.as_deref())
}
