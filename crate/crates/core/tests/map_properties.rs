use ndarray::Array2;
use proptest::prelude::*;
use structcore::knn::PatchScores;
use structcore::map::{bilinear_resize, build_map, gaussian_blur, pool_max};
use structcore::AnomalyMap;

fn grid() -> impl Strategy<Value = Array2<f32>> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..5.0, h * w)
            .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
    })
}

fn range(a: &Array2<f32>) -> (f32, f32) {
    a.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

proptest! {
    #[test]
    fn blur_stays_within_input_range(src in grid(), sigma in 0.1f64..4.0) {
        let (lo, hi) = range(&src);
        let out = gaussian_blur(&src, sigma);
        for &v in out.iter() {
            prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
        }
    }

    #[test]
    fn blur_keeps_constants(c in 0.0f32..10.0, h in 1usize..10, w in 1usize..10, sigma in 0.1f64..4.0) {
        let out = gaussian_blur(&Array2::from_elem((h, w), c), sigma);
        for &v in out.iter() {
            prop_assert!((v - c).abs() <= 1e-6 * c.max(1.0));
        }
    }

    #[test]
    fn blur_is_linear(a in grid(), scale in 0.1f32..3.0, sigma in 0.5f64..3.0) {
        let b = a.mapv(|v| v * scale);
        let ba = gaussian_blur(&a, sigma);
        let bb = gaussian_blur(&b, sigma);
        for (x, y) in ba.iter().zip(bb.iter()) {
            prop_assert!((x * scale - y).abs() <= 1e-4 * y.abs().max(1.0));
        }
    }

    #[test]
    fn same_size_resize_is_identity(src in grid()) {
        let out = bilinear_resize(&src, src.nrows(), src.ncols());
        for (x, y) in src.iter().zip(out.iter()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn upsampling_stays_within_range(src in grid(), fh in 1usize..5, fw in 1usize..5) {
        let (lo, hi) = range(&src);
        let out = bilinear_resize(&src, src.nrows() * fh, src.ncols() * fw);
        for &v in out.iter() {
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }

    #[test]
    fn pool_max_ignores_permutation(src in grid(), rot in 0usize..64) {
        let mut flat: Vec<f32> = src.iter().copied().collect();
        let r = rot % flat.len();
        flat.rotate_left(r);
        let shuffled = Array2::from_shape_vec(src.dim(), flat).unwrap();
        let a = AnomalyMap::from_array(src).unwrap();
        let b = AnomalyMap::from_array(shuffled).unwrap();
        prop_assert_eq!(pool_max(&a), pool_max(&b));
    }
}

#[test]
fn pool_max_of_smoothed_constant_is_the_constant() {
    let scores = PatchScores::new(vec![0.7; 16], 4, 4).unwrap();
    let raw = build_map(&scores, 16, 16, 0.0).unwrap();
    let smooth = build_map(&scores, 16, 16, 4.0).unwrap();
    assert!((pool_max(&raw) - 0.7).abs() < 1e-6);
    assert!((pool_max(&smooth) - 0.7).abs() < 1e-6);
    assert!(smooth.is_smoothed() && !raw.is_smoothed());
}

#[test]
fn export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let map = AnomalyMap::from_array(Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f32 * 0.1))
        .unwrap();
    structcore::map::export_map(&map, dir.path(), "m").unwrap();
    let back = structcore::map::import_map(dir.path().join("m.f32")).unwrap();
    assert_eq!(back.to_le_bytes(), map.to_le_bytes());
    assert_eq!((back.height(), back.width()), (3, 5));
}
