//! Exact k-nearest-neighbor patch scoring against a memory bank.
//!
//! A patch's score is the mean squared Euclidean distance to its `k` nearest
//! bank rows. Distances use the expansion `|q|^2 + |m|^2 - 2 q.m` with f64
//! accumulation, computed for a block of queries at a time so each bank row is
//! read once per block. Negative values from cancellation are clamped to 0.

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

const QUERY_BLOCK: usize = 8;

/// Per-patch anomaly scores on the token grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores {
    scores: Vec<f32>,
    grid_h: usize,
    grid_w: usize,
}

impl PatchScores {
    pub fn new(scores: Vec<f32>, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::Invariant("patch grid must be at least 1x1".into()));
        }
        if scores.len() != grid_h * grid_w {
            return Err(Error::dims("patch score count", grid_h * grid_w, scores.len()));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Invariant("patch scores must be finite and >= 0".into()));
        }
        Ok(Self {
            scores,
            grid_h,
            grid_w,
        })
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }
}

/// A memory bank prepared for repeated exact search: rows widened to f64
/// with precomputed squared norms.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    rows: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl KnnIndex {
    pub fn new(bank: ArrayView2<'_, f32>) -> Result<Self> {
        if bank.nrows() == 0 {
            return Err(Error::Empty("memory bank"));
        }
        let dim = bank.ncols();
        if dim == 0 {
            return Err(Error::Invariant("memory bank rows must have at least one column".into()));
        }
        let rows: Vec<f64> = bank.iter().map(|&v| v as f64).collect();
        let norms = rows
            .chunks_exact(dim)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        Ok(Self { rows, norms, dim })
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean squared distance from each query row to its `min(k, N)` nearest
    /// bank rows.
    pub fn score(&self, queries: ArrayView2<'_, f32>, k: usize) -> Result<Vec<f32>> {
        if queries.ncols() != self.dim {
            return Err(Error::dims("query dimension", self.dim, queries.ncols()));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let k = k.min(self.len());
        let n = self.len();
        let dim = self.dim;
        let blocks: Vec<_> = queries.axis_chunks_iter(Axis(0), QUERY_BLOCK).collect();
        let per_block: Vec<Vec<f32>> = blocks
            .into_par_iter()
            .map(|block| {
                let b = block.nrows();
                let q: Vec<f64> = block.iter().map(|&v| v as f64).collect();
                let q_norms: Vec<f64> = q
                    .chunks_exact(dim)
                    .map(|r| r.iter().map(|v| v * v).sum())
                    .collect();
                let mut dists = vec![0.0f64; b * n];
                for (j, m) in self.rows.chunks_exact(dim).enumerate() {
                    for i in 0..b {
                        let qi = &q[i * dim..(i + 1) * dim];
                        let dot: f64 = qi.iter().zip(m).map(|(a, c)| a * c).sum();
                        let d = q_norms[i] + self.norms[j] - 2.0 * dot;
                        dists[i * n + j] = d.max(0.0);
                    }
                }
                dists
                    .chunks_exact_mut(n)
                    .map(|row| mean_of_smallest(row, k) as f32)
                    .collect()
            })
            .collect();
        Ok(per_block.into_iter().flatten().collect())
    }
}

fn mean_of_smallest(values: &mut [f64], k: usize) -> f64 {
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let smallest = &mut values[..k];
    smallest.sort_unstable_by(f64::total_cmp);
    smallest.iter().sum::<f64>() / k as f64
}

/// One-shot exact kNN scoring; see [`KnnIndex`] for repeated queries.
pub fn score_patches(
    queries: ArrayView2<'_, f32>,
    bank: ArrayView2<'_, f32>,
    k: usize,
) -> Result<Vec<f32>> {
    if bank.ncols() != queries.ncols() {
        return Err(Error::dims("bank dimension", queries.ncols(), bank.ncols()));
    }
    KnnIndex::new(bank)?.score(queries, k)
}
