pub mod ablate;
pub mod bench;
pub mod eval;
pub mod fit;
pub mod score;
pub mod synth;

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use structcore::feature_store::{load_bundle, read_feature_file, read_mask_file};
use structcore::manifest::ManifestEntry;
use structcore::pipeline::{Detector, RoutedScore, Routing};
use structcore::{Error, ModelBundle, PatchFeatureSet};

use crate::args::RoutingArgs;

/// Loads every `.scmb` file in `dir`, in file-name order.
pub fn load_bundles(dir: &Path) -> Result<Vec<ModelBundle>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scmb"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("model bundles")).with_context(|| format!("no .scmb files in {}", dir.display()));
    }
    paths
        .iter()
        .map(|p| load_bundle(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// Reads a manifest entry's feature file. A mask listed in the manifest
/// replaces any mask embedded in the file.
pub fn load_entry(entry: &ManifestEntry) -> Result<PatchFeatureSet> {
    let mut set = read_feature_file(&entry.path)
        .with_context(|| format!("reading {}", entry.path.display()))?;
    if let Some(mask) = &entry.mask {
        set.pixel_mask = Some(read_mask_file(mask).with_context(|| format!("reading {}", mask.display()))?);
    }
    Ok(set)
}

pub fn routing_label(args: &RoutingArgs) -> String {
    match (args.no_routing, &args.category) {
        (false, _) => "auto".into(),
        (true, None) => "manifest".into(),
        (true, Some(c)) => format!("fixed:{c}"),
    }
}

fn routing_for(args: &RoutingArgs, entry: &ManifestEntry) -> Routing {
    match (args.no_routing, &args.category) {
        (false, _) => Routing::Auto,
        (true, None) => Routing::Fixed(entry.category().to_string()),
        (true, Some(c)) => Routing::Fixed(c.clone()),
    }
}

/// Loads and scores every entry in parallel. Output order follows `entries`.
pub fn score_entries(
    detector: &Detector,
    entries: &[ManifestEntry],
    routing: &RoutingArgs,
    lambda: Option<f64>,
) -> Result<Vec<(PatchFeatureSet, RoutedScore)>> {
    entries
        .par_iter()
        .map(|entry| {
            let set = load_entry(entry)?;
            let scored = detector
                .score(&set, &routing_for(routing, entry), lambda)
                .with_context(|| format!("scoring {}", entry.path.display()))?;
            Ok((set, scored))
        })
        .collect()
}
