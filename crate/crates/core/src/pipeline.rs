//! End-to-end fitting and scoring for one or more categories.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::coreset::{select_coreset, ProxySpace};
use crate::error::{Error, Result};
use crate::feature_store::{Label, ModelBundle, PatchFeatureSet};
use crate::knn::{KnnIndex, PatchScores};
use crate::map::{build_map, pool_max, AnomalyMap};
use crate::projection::{ProjectionSpec, Projector};
use crate::routing::{build_routing_bank, route, RouteDecision, RoutingBank};
use crate::structural::{describe, fit_from_descriptors, CalibrationSettings, StructDescriptor};

fn check_layers(set: &PatchFeatureSet, config: &PipelineConfig) -> Result<()> {
    let ids = set.layer_ids();
    if ids != config.layer_ids {
        return Err(Error::Malformed(format!(
            "image {:?} has layers {:?}, configuration expects {:?}",
            set.image_id, ids, config.layer_ids
        )));
    }
    Ok(())
}

/// Fits the memory bank, routing bank and structural calibration of one
/// category from its train-good feature sets.
pub fn fit_category(
    category_id: &str,
    train: &[PatchFeatureSet],
    config: &PipelineConfig,
) -> Result<ModelBundle> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("train-good images"));
    }
    for set in train {
        if set.label == Some(Label::Anomalous) {
            return Err(Error::Protocol(format!(
                "train image {:?} of category {category_id:?} is labeled anomalous",
                set.image_id
            )));
        }
        set.validate()?;
        check_layers(set, config)?;
    }
    let in_dim = train[0].fused_dim();
    for set in &train[1..] {
        if set.fused_dim() != in_dim {
            return Err(Error::dims(
                format!("fused dimension of {:?}", set.image_id),
                in_dim,
                set.fused_dim(),
            ));
        }
    }

    let projector = Projector::new(ProjectionSpec::new(in_dim, config.proj_out_dim, config.proj_seed))?;
    let embeddings: Vec<Array2<f32>> = train
        .par_iter()
        .map(|set| projector.embed(set))
        .collect::<Result<_>>()?;
    let views: Vec<ArrayView2<'_, f32>> = embeddings.iter().map(|e| e.view()).collect();
    let pool = concatenate(Axis(0), &views).map_err(|e| Error::Invariant(e.to_string()))?;

    let proxy = config.coreset_proxy_dim.map(|dim| ProxySpace {
        dim,
        seed: config.proj_seed.wrapping_add(1),
    });
    let coreset = select_coreset(pool.view(), config.coreset_ratio, proxy)?;
    let routing = build_routing_bank(category_id, pool.view(), config.routing_bank_size)?;

    let index = KnnIndex::new(coreset.bank.view())?;
    let self_scores: Vec<(f64, StructDescriptor)> = train
        .par_iter()
        .zip(embeddings.par_iter())
        .map(|(set, emb)| {
            let map = map_from_embedding(&index, emb.view(), set, config)?;
            Ok((pool_max(&map) as f64, describe(&map, config.topk_ratio)))
        })
        .collect::<Result<_>>()?;
    let (base, descriptors): (Vec<f64>, Vec<StructDescriptor>) = self_scores.into_iter().unzip();
    let calibration =
        fit_from_descriptors(&descriptors, &base, &CalibrationSettings::from_config(config))?;

    let bundle = ModelBundle {
        category_id: category_id.to_string(),
        projection: projector.spec().clone(),
        memory_bank: coreset.bank,
        routing_bank: routing.into_prototypes(),
        calibration,
        config: config.clone(),
    };
    bundle.validate()?;
    Ok(bundle)
}

fn map_from_embedding(
    index: &KnnIndex,
    embedding: ArrayView2<'_, f32>,
    set: &PatchFeatureSet,
    config: &PipelineConfig,
) -> Result<AnomalyMap> {
    let scores = index.score(embedding, config.knn_k)?;
    let scores = PatchScores::new(scores, set.grid_h, set.grid_w)?;
    let (h, w) = config.map_size_for(set.grid_h, set.grid_w);
    build_map(&scores, h, w, config.blur_sigma)
}

/// Image-level scores and the anomaly map they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub base: f64,
    pub structural: f64,
    pub hybrid: f64,
    pub descriptor: StructDescriptor,
    pub map: AnomalyMap,
}

/// A loaded bundle with its projection realized and its bank indexed.
#[derive(Debug, Clone)]
pub struct CategoryModel {
    bundle: ModelBundle,
    projector: Projector,
    index: KnnIndex,
    routing: RoutingBank,
}

impl CategoryModel {
    pub fn new(bundle: ModelBundle) -> Result<Self> {
        bundle.validate()?;
        let projector = Projector::new(bundle.projection.clone())?;
        let index = KnnIndex::new(bundle.memory_bank.view())?;
        let routing = bundle.routing();
        Ok(Self {
            bundle,
            projector,
            index,
            routing,
        })
    }

    pub fn category_id(&self) -> &str {
        &self.bundle.category_id
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.bundle.config
    }

    pub fn routing_bank(&self) -> &RoutingBank {
        &self.routing
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Fuses and projects `set` with this category's projection.
    pub fn embed(&self, set: &PatchFeatureSet) -> Result<Array2<f32>> {
        set.validate()?;
        check_layers(set, &self.bundle.config)?;
        if set.fused_dim() != self.projector.spec().in_dim {
            return Err(Error::dims(
                format!("fused dimension of {:?}", set.image_id),
                self.projector.spec().in_dim,
                set.fused_dim(),
            ));
        }
        self.projector.embed(set)
    }

    /// Anomaly map of an already embedded image.
    pub fn anomaly_map(&self, embedding: ArrayView2<'_, f32>, set: &PatchFeatureSet) -> Result<AnomalyMap> {
        map_from_embedding(&self.index, embedding, set, &self.bundle.config)
    }

    /// Base, structural and hybrid scores of an already embedded image.
    /// `lambda` overrides the calibrated weight when given.
    pub fn score_embedded(
        &self,
        embedding: ArrayView2<'_, f32>,
        set: &PatchFeatureSet,
        lambda: Option<f64>,
    ) -> Result<ImageScore> {
        let map = self.anomaly_map(embedding, set)?;
        let calib = &self.bundle.calibration;
        let base = pool_max(&map) as f64;
        let descriptor = describe(&map, calib.topk_ratio);
        let structural = calib.distance(&descriptor)?;
        let weight = lambda.unwrap_or(calib.lambda_auto);
        Ok(ImageScore {
            base,
            structural,
            hybrid: base + weight * structural,
            descriptor,
            map,
        })
    }

    pub fn score(&self, set: &PatchFeatureSet) -> Result<ImageScore> {
        let embedding = self.embed(set)?;
        self.score_embedded(embedding.view(), set, None)
    }
}

/// How the scoring category is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routing {
    /// Bind each image to its nearest category by prototype distance.
    Auto,
    /// Score every image against the named category.
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedScore {
    pub category_id: String,
    pub route: Option<RouteDecision>,
    pub score: ImageScore,
}

/// A set of fitted categories behind one scoring entry point.
#[derive(Debug, Clone)]
pub struct Detector {
    models: Vec<CategoryModel>,
}

impl Detector {
    /// Models are kept sorted by category id.
    pub fn new(bundles: Vec<ModelBundle>) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::Empty("model bundles"));
        }
        let mut models: Vec<CategoryModel> = bundles
            .into_iter()
            .map(CategoryModel::new)
            .collect::<Result<_>>()?;
        models.sort_by(|a, b| a.category_id().cmp(b.category_id()));
        for pair in models.windows(2) {
            if pair[0].category_id() == pair[1].category_id() {
                return Err(Error::Invariant(format!(
                    "duplicate category {:?}",
                    pair[0].category_id()
                )));
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[CategoryModel] {
        &self.models
    }

    pub fn model(&self, category_id: &str) -> Result<&CategoryModel> {
        self.models
            .iter()
            .find(|m| m.category_id() == category_id)
            .ok_or_else(|| Error::UnknownCategory(category_id.to_string()))
    }

    /// Routes (or binds) `set` to a category and scores it there. Images are
    /// never re-scored against another category if routing is wrong.
    pub fn score(&self, set: &PatchFeatureSet, routing: &Routing, lambda: Option<f64>) -> Result<RoutedScore> {
        match routing {
            Routing::Fixed(category) => {
                let model = self.model(category)?;
                let emb = model.embed(set)?;
                Ok(RoutedScore {
                    category_id: category.clone(),
                    route: None,
                    score: model.score_embedded(emb.view(), set, lambda)?,
                })
            }
            Routing::Auto => {
                // categories sharing a projection share one embedding
                let mut cache: Vec<(ProjectionSpec, Array2<f32>)> = Vec::new();
                let mut banks = Vec::with_capacity(self.models.len());
                let mut emb_of = Vec::with_capacity(self.models.len());
                for model in &self.models {
                    let spec = model.projector().spec();
                    let slot = match cache.iter().position(|(s, _)| s == spec) {
                        Some(i) => i,
                        None => {
                            cache.push((spec.clone(), model.embed(set)?));
                            cache.len() - 1
                        }
                    };
                    emb_of.push(slot);
                    banks.push(model.routing_bank());
                }
                let decision = if cache.len() == 1 {
                    let owned: Vec<RoutingBank> = banks.iter().map(|b| (*b).clone()).collect();
                    route(cache[0].1.view(), &owned)?
                } else {
                    route_mixed(&self.models, &cache, &emb_of)?
                };
                let idx = self
                    .models
                    .iter()
                    .position(|m| m.category_id() == decision.category_id)
                    .unwrap();
                let emb = &cache[emb_of[idx]].1;
                Ok(RoutedScore {
                    category_id: decision.category_id.clone(),
                    score: self.models[idx].score_embedded(emb.view(), set, lambda)?,
                    route: Some(decision),
                })
            }
        }
    }
}

fn route_mixed(
    models: &[CategoryModel],
    cache: &[(ProjectionSpec, Array2<f32>)],
    emb_of: &[usize],
) -> Result<RouteDecision> {
    let mut scores = Vec::with_capacity(models.len());
    for (model, &slot) in models.iter().zip(emb_of) {
        let single = route(cache[slot].1.view(), std::slice::from_ref(model.routing_bank()))?;
        scores.push(single.scores[0].clone());
    }
    let best = scores
        .iter()
        .min_by(|(ca, sa), (cb, sb)| sa.total_cmp(sb).then_with(|| ca.cmp(cb)))
        .unwrap()
        .0
        .clone();
    Ok(RouteDecision {
        category_id: best,
        scores,
    })
}

/// Per-stage timings of one scored image, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub fuse_project_ms: f64,
    pub knn_ms: f64,
    pub map_struct_ms: f64,
    pub total_ms: f64,
}

impl CategoryModel {
    /// Scores `set` while timing each stage.
    pub fn score_timed(&self, set: &PatchFeatureSet) -> Result<(ImageScore, StageTimings)> {
        use std::time::Instant;
        let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();

        let t = Instant::now();
        let embedding = self.embed(set)?;
        let fuse_project_ms = ms(t);

        let t = Instant::now();
        let patch = self.index.score(embedding.view(), self.bundle.config.knn_k)?;
        let knn_ms = ms(t);

        let t = Instant::now();
        let config = &self.bundle.config;
        let patch = PatchScores::new(patch, set.grid_h, set.grid_w)?;
        let (h, w) = config.map_size_for(set.grid_h, set.grid_w);
        let map = build_map(&patch, h, w, config.blur_sigma)?;
        let calib = &self.bundle.calibration;
        let base = pool_max(&map) as f64;
        let descriptor = describe(&map, calib.topk_ratio);
        let structural = calib.distance(&descriptor)?;
        let map_struct_ms = ms(t);

        let score = ImageScore {
            base,
            structural,
            hybrid: base + calib.lambda_auto * structural,
            descriptor,
            map,
        };
        let timings = StageTimings {
            fuse_project_ms,
            knn_ms,
            map_struct_ms,
            total_ms: ms(start),
        };
        Ok((score, timings))
    }
}
