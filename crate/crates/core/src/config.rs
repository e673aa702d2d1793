//! Pipeline configuration and its defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structural::{ComponentMask, DistanceKind};

/// Token stride of the backbone the features come from. When no output map
/// size is configured, maps are upsampled by this factor so that they line up
/// with the cropped input image.
pub const DEFAULT_PATCH_STRIDE: usize = 14;

/// Every knob of the fit/score pipeline.
///
/// `Default` gives the reference configuration: five skip layers, a 512-d
/// projection seeded with 42, a 1% coreset, 5-NN scoring, Gaussian smoothing
/// with sigma 4, a top-1% tail statistic, 64 routing prototypes per category
/// and the diagonal Mahalanobis structural distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub layer_ids: Vec<i32>,
    pub proj_out_dim: usize,
    pub proj_seed: u64,
    pub coreset_ratio: f64,
    /// Dimension of the proxy space used for coreset distances; `None`
    /// selects in the full projected space.
    pub coreset_proxy_dim: Option<usize>,
    pub knn_k: usize,
    pub blur_sigma: f64,
    pub topk_ratio: f64,
    pub routing_bank_size: usize,
    pub struct_distance: DistanceKind,
    pub active_components: ComponentMask,
    pub epsilon: f64,
    /// Output anomaly map size `(height, width)`. `None` means the token grid
    /// scaled by [`DEFAULT_PATCH_STRIDE`].
    pub output_map_size: Option<(usize, usize)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            layer_ids: vec![-1, -3, -6, -9, -12],
            proj_out_dim: 512,
            proj_seed: 42,
            coreset_ratio: 0.01,
            coreset_proxy_dim: None,
            knn_k: 5,
            blur_sigma: 4.0,
            topk_ratio: 0.01,
            routing_bank_size: 64,
            struct_distance: DistanceKind::DiagMahalanobis,
            active_components: ComponentMask::ALL,
            epsilon: 1e-8,
            output_map_size: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layer_ids.is_empty() {
            return bad("layer_ids must not be empty".into());
        }
        for (i, id) in self.layer_ids.iter().enumerate() {
            if self.layer_ids[..i].contains(id) {
                return bad(format!("duplicate layer id {id}"));
            }
        }
        if self.proj_out_dim == 0 {
            return bad("proj_out_dim must be at least 1".into());
        }
        if !(self.coreset_ratio > 0.0 && self.coreset_ratio <= 1.0) {
            return bad(format!("coreset_ratio {} not in (0, 1]", self.coreset_ratio));
        }
        if self.coreset_proxy_dim == Some(0) {
            return bad("coreset_proxy_dim must be at least 1".into());
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur_sigma {} must be finite and >= 0", self.blur_sigma));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return bad(format!("topk_ratio {} not in (0, 1]", self.topk_ratio));
        }
        if self.routing_bank_size == 0 {
            return bad("routing_bank_size must be at least 1".into());
        }
        if self.active_components.is_empty() {
            return bad("at least one structural component must be active".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be finite and > 0", self.epsilon));
        }
        if let Some((h, w)) = self.output_map_size {
            if h == 0 || w == 0 {
                return bad("output_map_size must be at least 1x1".into());
            }
        }
        Ok(())
    }

    /// Map size used for an input with the given token grid.
    pub fn map_size_for(&self, grid_h: usize, grid_w: usize) -> (usize, usize) {
        self.output_map_size
            .unwrap_or((grid_h * DEFAULT_PATCH_STRIDE, grid_w * DEFAULT_PATCH_STRIDE))
    }
}
