//! Greedy farthest-point (k-center) coreset selection.
//!
//! Selection starts at row 0 and repeatedly adds the row farthest from the
//! already selected set, keeping a per-row minimum squared distance that is
//! updated in `O(T)` per pick. Ties go to the smallest row index, which makes
//! the result a pure function of the pool.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{ProjectionSpec, Projector};

/// Optional low-dimensional space in which selection distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySpace {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetResult {
    /// Indices into the source pool in selection order.
    pub selected_indices: Vec<u64>,
    /// Selected rows gathered from the full-dimensional pool.
    pub bank: Array2<f32>,
}

/// Number of rows kept for ratio `p` over a pool of `t` rows:
/// `max(1, floor(p * t))`.
pub fn coreset_size(t: usize, ratio: f64) -> usize {
    ((ratio * t as f64).floor() as usize).clamp(1, t.max(1))
}

fn squared_distance(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Greedy k-center selection of `m` rows. Returns indices in pick order.
///
/// `m` is clamped to the pool size. Once every remaining row is at distance
/// zero (duplicates), the smallest unselected indices are taken in order.
pub fn greedy_k_center(points: ArrayView2<'_, f32>, m: usize) -> Result<Vec<usize>> {
    let t = points.nrows();
    if t == 0 {
        return Err(Error::Empty("coreset pool"));
    }
    let m = m.clamp(1, t);
    let mut selected = Vec::with_capacity(m);
    // selected rows hold -inf so they can never win the argmax again
    let mut min_dist = vec![f64::INFINITY; t];
    let mut current = 0usize;
    loop {
        selected.push(current);
        min_dist[current] = f64::NEG_INFINITY;
        if selected.len() == m {
            break;
        }
        let anchor = points.row(current);
        min_dist
            .par_iter_mut()
            .zip(points.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(best, row)| {
                if *best > 0.0 {
                    let d = squared_distance(anchor, row);
                    if d < *best {
                        *best = d;
                    }
                }
            });
        let mut arg = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best {
                best = d;
                arg = i;
            }
        }
        current = arg;
    }
    Ok(selected)
}

/// Compresses `pool` (`T x D`) to `max(1, floor(ratio * T))` rows.
///
/// With a proxy space, distances are measured after a second random
/// projection, but the returned bank always holds the original rows.
pub fn select_coreset(
    pool: ArrayView2<'_, f32>,
    ratio: f64,
    proxy: Option<ProxySpace>,
) -> Result<CoresetResult> {
    if pool.nrows() == 0 {
        return Err(Error::Empty("coreset pool"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("coreset ratio {ratio} not in (0, 1]")));
    }
    let m = coreset_size(pool.nrows(), ratio);
    let order = match proxy {
        Some(space) => {
            let projector = Projector::new(ProjectionSpec::new(pool.ncols(), space.dim, space.seed))?;
            let reduced = projector.apply(pool)?;
            greedy_k_center(reduced.view(), m)?
        }
        None => greedy_k_center(pool, m)?,
    };
    let bank = pool.select(Axis(0), &order);
    Ok(CoresetResult {
        selected_indices: order.into_iter().map(|i| i as u64).collect(),
        bank,
    })
}

/// Largest Euclidean distance from any pool row to its nearest selected row.
pub fn covering_radius(points: ArrayView2<'_, f32>, selected: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .map(|row| {
            selected
                .iter()
                .map(|&s| squared_distance(row, points.row(s)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}
