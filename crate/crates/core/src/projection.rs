//! Multi-layer feature fusion and the fixed random projection.
//!
//! Each layer's patch tokens are scaled to unit length, the layers are
//! concatenated along channels, and the result is multiplied by a Gaussian
//! random matrix with entries drawn from N(0, 1/D). The matrix is generated by
//! a pinned splitmix64 + Box-Muller stream so it is reproducible bit-for-bit
//! from `(in_dim, out_dim, seed)` alone.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::PatchFeatureSet;

/// Shape and seed of a random projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        Self {
            in_dim,
            out_dim,
            seed,
        }
    }
}

/// The splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normals from Box-Muller over consecutive uniform pairs. Both
/// outputs of each pair are used, cosine branch first.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_f64();
        let u2 = self.rng.next_f64();
        // 1 - u1 lies in (0, 1], so the log is finite
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Realizes the `in_dim x out_dim` projection matrix for `spec`.
pub fn realize_projection(spec: &ProjectionSpec) -> Result<Array2<f32>> {
    if spec.in_dim == 0 || spec.out_dim == 0 {
        return Err(Error::Config(format!(
            "projection dimensions must be positive, got {}x{}",
            spec.in_dim, spec.out_dim
        )));
    }
    let scale = 1.0 / (spec.out_dim as f64).sqrt();
    let mut stream = GaussianStream::new(spec.seed);
    let values = (0..spec.in_dim * spec.out_dim)
        .map(|_| (stream.next_normal() * scale) as f32)
        .collect();
    Ok(Array2::from_shape_vec((spec.in_dim, spec.out_dim), values).unwrap())
}

/// Scales every row to unit Euclidean length. Zero rows are left as zeros.
pub fn l2_normalize_rows(mut m: ArrayViewMut2<'_, f32>) {
    m.axis_iter_mut(Axis(0))
        .into_par_iter()
        .for_each(|mut row| {
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| (v as f64 / norm) as f32);
            }
        });
}

/// Per-layer unit normalization followed by channel concatenation in layer
/// order. Output is `P x sum(d)`.
pub fn fuse_layers(set: &PatchFeatureSet) -> Result<Array2<f32>> {
    if set.layers.is_empty() {
        return Err(Error::Empty("feature set has no layers"));
    }
    let p = set.layers[0].tokens.nrows();
    for layer in &set.layers[1..] {
        if layer.tokens.nrows() != p {
            return Err(Error::dims(
                format!("patch count of layer {}", layer.layer_id),
                p,
                layer.tokens.nrows(),
            ));
        }
    }
    let mut fused = Array2::<f32>::zeros((p, set.fused_dim()));
    let mut offset = 0;
    for layer in &set.layers {
        let d = layer.tokens.ncols();
        fused.slice_mut(s![.., offset..offset + d]).assign(&layer.tokens);
        l2_normalize_rows(fused.slice_mut(s![.., offset..offset + d]));
        offset += d;
    }
    Ok(fused)
}

/// Plain matrix product `fused * weights`, accumulated in f64. The result is
/// not re-normalized.
pub fn project(fused: ArrayView2<'_, f32>, weights: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    if fused.ncols() != weights.nrows() {
        return Err(Error::dims("projection input dimension", weights.nrows(), fused.ncols()));
    }
    let out_dim = weights.ncols();
    let weights = weights.as_standard_layout();
    let mut out = Array2::<f32>::zeros((fused.nrows(), out_dim));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(fused.axis_iter(Axis(0)).into_par_iter())
        .for_each_init(
            || vec![0.0f64; out_dim],
            |acc, (mut dst, src)| {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (x, w_row) in src.iter().zip(weights.rows()) {
                    if *x == 0.0 {
                        continue;
                    }
                    let x = *x as f64;
                    for (a, &w) in acc.iter_mut().zip(w_row.iter()) {
                        *a += x * w as f64;
                    }
                }
                for (d, a) in dst.iter_mut().zip(acc.iter()) {
                    *d = *a as f32;
                }
            },
        );
    Ok(out)
}

/// A realized projection ready to apply to feature sets.
#[derive(Debug, Clone)]
pub struct Projector {
    spec: ProjectionSpec,
    weights: Array2<f32>,
}

impl Projector {
    pub fn new(spec: ProjectionSpec) -> Result<Self> {
        let weights = realize_projection(&spec)?;
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn weights(&self) -> ArrayView2<'_, f32> {
        self.weights.view()
    }

    pub fn apply(&self, rows: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        project(rows, self.weights.view())
    }

    /// Fuses and projects one image's features into `P x D` embeddings.
    pub fn embed(&self, set: &PatchFeatureSet) -> Result<Array2<f32>> {
        self.apply(fuse_layers(set)?.view())
    }
}
