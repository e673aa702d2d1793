//! Category routing by nearest-prototype distance.
//!
//! Every category keeps a small bank of unit-norm prototypes chosen by greedy
//! k-center over its normalized training embeddings. An input image is bound
//! to the category whose prototypes are closest on average over its patches:
//! `route(c) = mean_p min_r |z_p - r|^2` with unit-normalized `z_p`.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::coreset::greedy_k_center;
use crate::error::{Error, Result};
use crate::projection::l2_normalize_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingBank {
    category_id: String,
    prototypes: Array2<f32>,
}

impl RoutingBank {
    pub(crate) fn from_parts(category_id: String, prototypes: Array2<f32>) -> Self {
        Self {
            category_id,
            prototypes,
        }
    }

    /// Wraps existing prototypes. Every row must have unit length within
    /// `1e-5`.
    pub fn new(category_id: impl Into<String>, prototypes: Array2<f32>) -> Result<Self> {
        if prototypes.nrows() == 0 || prototypes.ncols() == 0 {
            return Err(Error::Empty("routing prototypes"));
        }
        for row in prototypes.rows() {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= 1e-5) {
                return Err(Error::Invariant(format!("routing prototype norm {norm} is not 1")));
            }
        }
        Ok(Self::from_parts(category_id.into(), prototypes))
    }

    pub fn category_id(&self) -> &str {
        &self.category_id
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f32> {
        self.prototypes.view()
    }

    pub fn into_prototypes(self) -> Array2<f32> {
        self.prototypes
    }
}

/// Builds a routing bank of up to `size` prototypes from a category's
/// embedding pool. Zero rows are dropped before selection.
pub fn build_routing_bank(
    category_id: impl Into<String>,
    pool: ArrayView2<'_, f32>,
    size: usize,
) -> Result<RoutingBank> {
    if pool.nrows() == 0 {
        return Err(Error::Empty("routing pool"));
    }
    if size == 0 {
        return Err(Error::Config("routing bank size must be at least 1".into()));
    }
    let keep: Vec<usize> = pool
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("routing pool has only zero rows"));
    }
    let mut normalized = pool.select(Axis(0), &keep);
    l2_normalize_rows(normalized.view_mut());
    let picked = greedy_k_center(normalized.view(), size.min(normalized.nrows()))?;
    Ok(RoutingBank {
        category_id: category_id.into(),
        prototypes: normalized.select(Axis(0), &picked),
    })
}

/// Outcome of routing one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteDecision {
    pub category_id: String,
    /// `(category, route score)` in the order the banks were given.
    pub scores: Vec<(String, f64)>,
}

/// Mean nearest-prototype squared distance of unit-normalized patches.
pub fn route_score(normalized_patches: ArrayView2<'_, f32>, bank: &RoutingBank) -> f64 {
    let protos = bank.prototypes.view();
    let per_patch: Vec<f64> = normalized_patches
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|z| {
            protos
                .rows()
                .into_iter()
                .map(|r| {
                    z.iter()
                        .zip(r.iter())
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    per_patch.iter().sum::<f64>() / per_patch.len() as f64
}

/// Routes `patches` (`P x D`, unnormalized) to one of `banks`. Ties go to the
/// lexicographically smallest category id.
pub fn route(patches: ArrayView2<'_, f32>, banks: &[RoutingBank]) -> Result<RouteDecision> {
    if banks.is_empty() {
        return Err(Error::Empty("routing bank list"));
    }
    if patches.nrows() == 0 {
        return Err(Error::Empty("patches to route"));
    }
    for bank in banks {
        if bank.prototypes.ncols() != patches.ncols() {
            return Err(Error::dims(
                format!("routing bank {:?} dimension", bank.category_id),
                patches.ncols(),
                bank.prototypes.ncols(),
            ));
        }
    }
    let mut normalized = patches.to_owned();
    l2_normalize_rows(normalized.view_mut());
    let scores: Vec<(String, f64)> = banks
        .iter()
        .map(|b| (b.category_id.clone(), route_score(normalized.view(), b)))
        .collect();
    let (best, _) = scores
        .iter()
        .min_by(|(ca, sa), (cb, sb)| sa.total_cmp(sb).then_with(|| ca.cmp(cb)))
        .unwrap();
    Ok(RouteDecision {
        category_id: best.clone(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn collinear_rows_collapse_to_one_direction() {
        let pool = array![[3.0f32, 4.0], [6.0, 8.0]];
        let bank = build_routing_bank("a", pool.view(), 2).unwrap();
        for row in bank.prototypes().rows() {
            assert!((row[0] - 0.6).abs() < 1e-7 && (row[1] - 0.8).abs() < 1e-7);
        }
    }

    #[test]
    fn orthonormal_rows_pick_first_two() {
        let pool = Array2::<f32>::eye(4);
        let bank = build_routing_bank("a", pool.view(), 2).unwrap();
        assert_eq!(bank.prototypes(), pool.slice(ndarray::s![0..2, ..]));
    }

    #[test]
    fn identical_rows_pad_with_duplicates() {
        let pool = Array2::from_elem((5, 2), std::f32::consts::FRAC_1_SQRT_2);
        let bank = build_routing_bank("a", pool.view(), 3).unwrap();
        assert_eq!(bank.prototypes().nrows(), 3);
        assert!(bank.prototypes().rows().into_iter().all(|r| r == pool.row(0)));
    }

    #[test]
    fn bank_size_limited_by_available_rows() {
        let pool = array![[1.0f32, 0.0], [0.0, 0.0], [0.0, 2.0]];
        let bank = build_routing_bank("a", pool.view(), 64).unwrap();
        assert_eq!(bank.prototypes().nrows(), 2);
    }

    #[test]
    fn empty_or_zero_pool_rejected() {
        assert!(build_routing_bank("a", Array2::<f32>::zeros((0, 2)).view(), 2).is_err());
        assert!(build_routing_bank("a", Array2::<f32>::zeros((3, 2)).view(), 2).is_err());
    }

    #[test]
    fn orthogonal_banks() {
        let a = build_routing_bank("0", array![[1.0f32, 0.0]].view(), 1).unwrap();
        let b = build_routing_bank("1", array![[0.0f32, 1.0]].view(), 1).unwrap();
        let patches = array![[1.0f32, 0.0], [2.0, 0.0]];
        let d = route(patches.view(), &[b.clone(), a.clone()]).unwrap();
        assert_eq!(d.category_id, "0");
        assert_eq!(d.scores, vec![("1".into(), 2.0), ("0".into(), 0.0)]);
    }

    #[test]
    fn ties_break_by_category_id() {
        let a = build_routing_bank("beta", array![[1.0f32, 0.0]].view(), 1).unwrap();
        let b = build_routing_bank("alpha", array![[0.0f32, 1.0]].view(), 1).unwrap();
        let patches = array![[1.0f32, 1.0]];
        assert_eq!(route(patches.view(), &[a, b]).unwrap().category_id, "alpha");
    }

    #[test]
    fn single_bank_always_wins() {
        let a = build_routing_bank("only", array![[1.0f32, 0.0]].view(), 1).unwrap();
        let d = route(array![[-1.0f32, 0.0]].view(), &[a]).unwrap();
        assert_eq!(d.category_id, "only");
        assert!((d.scores[0].1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn new_checks_unit_rows() {
        assert!(RoutingBank::new("a", array![[0.6f32, 0.8]]).is_ok());
        assert!(RoutingBank::new("a", array![[1.0f32, 1.0]]).is_err());
        assert!(RoutingBank::new("a", Array2::<f32>::zeros((0, 2))).is_err());
    }

    #[test]
    fn errors() {
        assert!(route(array![[1.0f32]].view(), &[]).is_err());
        let a = build_routing_bank("a", array![[1.0f32, 0.0]].view(), 1).unwrap();
        assert!(route(array![[1.0f32]].view(), &[a]).is_err());
    }
}
