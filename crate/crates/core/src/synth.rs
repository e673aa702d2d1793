//! Seeded synthetic fixtures.
//!
//! Two generators:
//!
//! * [`StructuralGapFixture`]: anomaly maps where normal and anomalous images
//!   share the same peak response and differ only in how the rest of the map
//!   is organized. Max pooling cannot separate them; the structural
//!   descriptor can.
//! * [`FeatureFixture`]: multi-category patch-feature sets with well separated
//!   category clusters and localized anomalous blocks, for exercising the
//!   full fit / route / score path.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::feature_store::{Label, LayerFeatures, PatchFeatureSet, PixelMask};
use crate::map::AnomalyMap;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Parameters of the structural-gap map fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralGapFixture {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub train_good: usize,
    pub test_good: usize,
    pub test_anomalous: usize,
    /// Background level and i.i.d. Gaussian noise amplitude.
    pub background: f64,
    pub noise: f64,
    /// Nominal spike height and its per-image jitter (same for both classes).
    pub spike_height: f64,
    pub spike_jitter: f64,
    /// Elevated rough disk added to anomalous maps.
    pub region_radius: f64,
    pub region_lift: f64,
    pub region_noise: f64,
    /// Anomalous values are capped at this fraction of the spike height, so
    /// the region never becomes the maximum.
    pub region_cap: f64,
}

impl Default for StructuralGapFixture {
    fn default() -> Self {
        Self {
            seed: 42,
            height: 32,
            width: 32,
            train_good: 100,
            test_good: 100,
            test_anomalous: 100,
            background: 0.2,
            noise: 0.05,
            spike_height: 1.0,
            spike_jitter: 0.02,
            region_radius: 6.0,
            region_lift: 0.3,
            region_noise: 0.1,
            region_cap: 0.9,
        }
    }
}

/// Maps of the structural-gap fixture.
#[derive(Debug, Clone)]
pub struct StructuralGapMaps {
    pub train: Vec<AnomalyMap>,
    /// Test maps with labels (`true` = anomalous), good maps first.
    pub test: Vec<(AnomalyMap, bool)>,
}

impl StructuralGapFixture {
    pub fn generate(&self) -> Result<StructuralGapMaps> {
        if self.height < 3 || self.width < 3 {
            return Err(Error::Config("fixture maps must be at least 3x3".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = (0..self.train_good)
            .map(|_| self.map(&mut rng, false))
            .collect::<Result<_>>()?;
        let mut test = Vec::with_capacity(self.test_good + self.test_anomalous);
        for _ in 0..self.test_good {
            test.push((self.map(&mut rng, false)?, false));
        }
        for _ in 0..self.test_anomalous {
            test.push((self.map(&mut rng, true)?, true));
        }
        Ok(StructuralGapMaps { train, test })
    }

    fn map(&self, rng: &mut ChaCha8Rng, anomalous: bool) -> Result<AnomalyMap> {
        let (h, w) = (self.height, self.width);
        let spike = self.spike_height + self.spike_jitter * normal(rng);
        let cap = self.region_cap * self.spike_height;
        let mut data = Array2::<f32>::zeros((h, w));
        for v in data.iter_mut() {
            *v = (self.background + self.noise * normal(rng)).clamp(0.0, cap) as f32;
        }
        if anomalous {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let r2 = self.region_radius * self.region_radius;
            for ((i, j), v) in data.indexed_iter_mut() {
                let dy = i as f64 - cy;
                let dx = j as f64 - cx;
                if dy * dy + dx * dx <= r2 {
                    let lifted = *v as f64 + self.region_lift + self.region_noise * normal(rng);
                    *v = lifted.clamp(0.0, cap) as f32;
                }
            }
        }
        let si = rng.random_range(0..h);
        let sj = rng.random_range(0..w);
        data[[si, sj]] = spike.max(cap) as f32;
        AnomalyMap::from_array(data)
    }
}

/// Parameters of the multi-category feature fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFixture {
    pub seed: u64,
    pub categories: usize,
    pub layer_ids: Vec<i32>,
    pub channels: usize,
    pub grid: usize,
    /// Distinct texture modes per category; patches sample one mode each.
    pub modes: usize,
    pub mode_spread: f64,
    pub noise: f64,
    pub train_per_category: usize,
    pub test_good_per_category: usize,
    pub test_anomalous_per_category: usize,
    /// Side of the anomalous square block, in patches.
    pub defect_size: usize,
    pub defect_strength: f64,
    /// Output map pixels per patch.
    pub map_stride: usize,
}

impl Default for FeatureFixture {
    fn default() -> Self {
        Self {
            seed: 42,
            categories: 3,
            layer_ids: vec![-1, -2],
            channels: 16,
            grid: 8,
            modes: 4,
            mode_spread: 0.25,
            noise: 0.05,
            train_per_category: 6,
            test_good_per_category: 5,
            test_anomalous_per_category: 5,
            defect_size: 2,
            defect_strength: 1.5,
            map_stride: 4,
        }
    }
}

/// One generated image with its split and category.
#[derive(Debug, Clone)]
pub struct FixtureImage {
    pub category: String,
    pub train: bool,
    pub features: PatchFeatureSet,
}

impl FeatureFixture {
    pub fn category_name(index: usize) -> String {
        format!("cat{index}")
    }

    /// Pipeline configuration sized for this fixture.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            layer_ids: self.layer_ids.clone(),
            proj_out_dim: 32,
            coreset_ratio: 0.25,
            routing_bank_size: 16,
            blur_sigma: 1.0,
            topk_ratio: 0.05,
            knn_k: 3,
            output_map_size: Some((self.grid * self.map_stride, self.grid * self.map_stride)),
            ..PipelineConfig::default()
        }
    }

    pub fn generate(&self) -> Result<Vec<FixtureImage>> {
        if self.categories == 0 || self.channels == 0 || self.grid == 0 || self.modes == 0 {
            return Err(Error::Config("fixture sizes must be positive".into()));
        }
        if self.defect_size > self.grid {
            return Err(Error::Config("defect block larger than grid".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_layers = self.layer_ids.len();
        // centers[c][l] and modes[c][l][m] as channel vectors
        let mut modes: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(self.categories);
        for _ in 0..self.categories {
            let mut per_layer = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let center = self.unit_vector(&mut rng);
                let layer_modes = (0..self.modes)
                    .map(|_| {
                        center
                            .iter()
                            .map(|c| c + self.mode_spread * normal(&mut rng) / (self.channels as f64).sqrt())
                            .collect()
                    })
                    .collect();
                per_layer.push(layer_modes);
            }
            modes.push(per_layer);
        }

        let mut images = Vec::new();
        for (c, cat_modes) in modes.iter().enumerate() {
            let name = Self::category_name(c);
            let plan = std::iter::repeat_n((true, false), self.train_per_category)
                .chain(std::iter::repeat_n((false, false), self.test_good_per_category))
                .chain(std::iter::repeat_n((false, true), self.test_anomalous_per_category));
            for (k, (train, anomalous)) in plan.enumerate() {
                let split = if train { "train" } else { "test" };
                let image_id = format!("{name}_{split}_{k:03}");
                let features = self.image(&mut rng, image_id, cat_modes, train, anomalous)?;
                images.push(FixtureImage {
                    category: name.clone(),
                    train,
                    features,
                });
            }
        }
        Ok(images)
    }

    fn unit_vector(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..self.channels).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn image(
        &self,
        rng: &mut ChaCha8Rng,
        image_id: String,
        cat_modes: &[Vec<Vec<f64>>],
        train: bool,
        anomalous: bool,
    ) -> Result<PatchFeatureSet> {
        let g = self.grid;
        let p = g * g;
        let defect = if anomalous {
            let top = rng.random_range(0..=g - self.defect_size);
            let left = rng.random_range(0..=g - self.defect_size);
            Some((top, left))
        } else {
            None
        };
        let in_defect = |idx: usize| {
            defect.is_some_and(|(t, l)| {
                let (i, j) = (idx / g, idx % g);
                i >= t && i < t + self.defect_size && j >= l && j < l + self.defect_size
            })
        };
        let mode_of: Vec<usize> = (0..p).map(|_| rng.random_range(0..self.modes)).collect();
        let mut layers = Vec::with_capacity(cat_modes.len());
        for (l, layer_modes) in cat_modes.iter().enumerate() {
            let scale = 1.0 + 0.5 * l as f64;
            let mut tokens = Array2::<f32>::zeros((p, self.channels));
            for (idx, mut row) in tokens.rows_mut().into_iter().enumerate() {
                let mode = &layer_modes[mode_of[idx]];
                let strength = if in_defect(idx) { self.defect_strength } else { 0.0 };
                for (ch, v) in row.iter_mut().enumerate() {
                    let jitter = self.noise * normal(rng);
                    let shift = strength * normal(rng) / (self.channels as f64).sqrt();
                    *v = (scale * (mode[ch] + jitter + shift)) as f32;
                }
            }
            layers.push(LayerFeatures {
                layer_id: self.layer_ids[l],
                tokens,
            });
        }
        let pixel_mask = if train {
            None
        } else {
            let side = g * self.map_stride;
            let mut data = vec![0u8; side * side];
            if let Some((t, l)) = defect {
                let s = self.map_stride;
                for i in t * s..(t + self.defect_size) * s {
                    for j in l * s..(l + self.defect_size) * s {
                        data[i * side + j] = 1;
                    }
                }
            }
            Some(PixelMask::new(side, side, data)?)
        };
        Ok(PatchFeatureSet {
            image_id,
            grid_h: g,
            grid_w: g,
            layers,
            label: Some(if anomalous { Label::Anomalous } else { Label::Good }),
            pixel_mask,
        })
    }
}
