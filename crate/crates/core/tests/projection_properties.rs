use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use structcore::feature_store::{LayerFeatures, PatchFeatureSet};
use structcore::projection::{fuse_layers, project, realize_projection, ProjectionSpec, Projector};

fn feature_set(layers: Vec<Array2<f32>>, grid: (usize, usize)) -> PatchFeatureSet {
    PatchFeatureSet {
        image_id: "p".into(),
        grid_h: grid.0,
        grid_w: grid.1,
        layers: layers
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| LayerFeatures { layer_id: -(i as i32) - 1, tokens })
            .collect(),
        label: None,
        pixel_mask: None,
    }
}

#[test]
fn random_projection_preserves_squared_norm_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d_in, d_out) = (256, 512);
    let rows = Array2::from_shape_fn((1000, d_in), |_| rng.sample::<f64, _>(StandardNormal) as f32);
    let mut unit = rows;
    structcore::projection::l2_normalize_rows(unit.view_mut());
    let w = realize_projection(&ProjectionSpec::new(d_in, d_out, 42)).unwrap();
    let out = project(unit.view(), w.view()).unwrap();
    let mean: f64 = out
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        / 1000.0;
    assert!((0.9..=1.1).contains(&mean), "mean squared norm {mean}");
}

#[test]
fn same_seed_same_matrix_other_seed_differs() {
    let a = realize_projection(&ProjectionSpec::new(10, 6, 42)).unwrap();
    let b = realize_projection(&ProjectionSpec::new(10, 6, 42)).unwrap();
    let c = realize_projection(&ProjectionSpec::new(10, 6, 43)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #[test]
    fn projection_is_linear(
        x in prop::collection::vec(-2.0f32..2.0, 12),
        y in prop::collection::vec(-2.0f32..2.0, 12),
        a in -3.0f32..3.0,
    ) {
        let w = realize_projection(&ProjectionSpec::new(12, 5, 9)).unwrap();
        let x = Array2::from_shape_vec((1, 12), x).unwrap();
        let y = Array2::from_shape_vec((1, 12), y).unwrap();
        let lhs = project((&x * a + &y).view(), w.view()).unwrap();
        let rhs = &project(x.view(), w.view()).unwrap() * a + &project(y.view(), w.view()).unwrap();
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-4 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn fused_norm_counts_non_zero_layers(
        a in prop::collection::vec(-2.0f32..2.0, 4 * 3),
        b in prop::collection::vec(-2.0f32..2.0, 4 * 5),
        zero_rows in prop::collection::vec(any::<bool>(), 4),
    ) {
        let la = Array2::from_shape_vec((4, 3), a).unwrap();
        let mut lb = Array2::from_shape_vec((4, 5), b).unwrap();
        for (i, z) in zero_rows.iter().enumerate() {
            if *z {
                lb.row_mut(i).fill(0.0);
            }
        }
        let fused = fuse_layers(&feature_set(vec![la.clone(), lb.clone()], (2, 2))).unwrap();
        prop_assert_eq!(fused.ncols(), 8);
        for i in 0..4 {
            let nonzero = [la.row(i), lb.row(i)]
                .iter()
                .filter(|r| r.iter().any(|&v| v != 0.0))
                .count();
            let norm = fused.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - (nonzero as f64).sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn embedding_is_deterministic_across_pools(
        v in prop::collection::vec(-1.0f32..1.0, 9 * 6),
        threads in 1usize..4,
    ) {
        let set = feature_set(vec![Array2::from_shape_vec((9, 6), v).unwrap()], (3, 3));
        let projector = Projector::new(ProjectionSpec::new(6, 4, 42)).unwrap();
        let reference = projector.embed(&set).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other = pool.install(|| projector.embed(&set)).unwrap();
        prop_assert_eq!(reference, other);
    }
}
