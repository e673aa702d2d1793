use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use structcore::feature_store::save_bundle;
use structcore::manifest::RunManifest;
use structcore::pipeline::fit_category;
use structcore::{Error, PatchFeatureSet, PipelineConfig};

use super::load_entry;
use crate::args::FitArgs;
use crate::records::{emit, file_stem};

#[derive(Debug, Serialize)]
struct FittedCategory {
    category: String,
    bundle: String,
    train_images: usize,
    pool_patches: usize,
    memory_bank_rows: usize,
    routing_prototypes: usize,
    lambda_auto: f64,
    mu: [f64; 3],
    sigma: [f64; 3],
    degenerate: bool,
}

#[derive(Debug, Serialize)]
struct FitReport {
    config: PipelineConfig,
    categories: Vec<FittedCategory>,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let manifest = RunManifest::load(&args.manifest)
        .with_context(|| format!("loading manifest {}", args.manifest.display()))?;
    let groups = manifest.by_category(&args.split)?;
    if groups.is_empty() {
        return Err(Error::Empty("train split").into());
    }
    std::fs::create_dir_all(&args.out_dir)?;

    let mut fitted = Vec::with_capacity(groups.len());
    for (category, entries) in &groups {
        if file_stem(category) != *category {
            return Err(Error::Config(format!(
                "category id {category:?} cannot be used as a file name"
            ))
            .into());
        }
        let sets: Vec<PatchFeatureSet> = entries
            .par_iter()
            .map(|e| load_entry(e))
            .collect::<Result<_>>()?;
        let bundle = fit_category(category, &sets, &config)
            .with_context(|| format!("fitting category {category:?}"))?;
        let file = format!("{category}.scmb");
        save_bundle(&bundle, args.out_dir.join(&file))?;
        let calib = &bundle.calibration;
        if calib.degenerate {
            warn!(
                "category {category:?}: structural calibration is degenerate ({} train images); lambda_auto = {}",
                sets.len(),
                calib.lambda_auto
            );
        }
        info!(
            "category {category:?}: {} train images, bank {} rows, lambda_auto {:.6}",
            sets.len(),
            bundle.memory_bank.nrows(),
            calib.lambda_auto
        );
        fitted.push(FittedCategory {
            category: category.clone(),
            bundle: file,
            train_images: sets.len(),
            pool_patches: sets.iter().map(|s| s.patch_count()).sum(),
            memory_bank_rows: bundle.memory_bank.nrows(),
            routing_prototypes: bundle.routing_bank.nrows(),
            lambda_auto: calib.lambda_auto,
            mu: calib.mu,
            sigma: calib.sigma,
            degenerate: calib.degenerate,
        });
    }
    let report = FitReport {
        config,
        categories: fitted,
    };
    emit(&report, Some(&args.out_dir.join("fit_report.json")))
}
