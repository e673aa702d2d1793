use ndarray::{Array2, Axis};
use proptest::prelude::*;
use structcore::routing::{build_routing_bank, route, RoutingBank};

fn pool(rows: usize, dim: usize) -> impl Strategy<Value = Array2<f32>> {
    prop::collection::vec(0.1f32..2.0, rows * dim)
        .prop_map(move |v| Array2::from_shape_vec((rows, dim), v).unwrap())
}

fn banks() -> impl Strategy<Value = Vec<RoutingBank>> {
    prop::collection::vec(pool(6, 4), 1..4).prop_map(|pools| {
        pools
            .iter()
            .enumerate()
            .map(|(i, p)| build_routing_bank(format!("c{i}"), p.view(), 3).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn scale_invariant(banks in banks(), patches in pool(5, 4), alpha in prop::sample::select(vec![0.1f32, 1.0, 10.0, 3.7])) {
        let a = route(patches.view(), &banks).unwrap();
        let scaled = patches.mapv(|v| v * alpha);
        let b = route(scaled.view(), &banks).unwrap();
        prop_assert_eq!(&a.category_id, &b.category_id);
        for ((_, x), (_, y)) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn prototype_order_does_not_matter(banks in banks(), patches in pool(5, 4), rot in 0usize..3) {
        let permuted: Vec<RoutingBank> = banks
            .iter()
            .map(|b| {
                let n = b.prototypes().nrows();
                let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
                let rows = b.prototypes().select(Axis(0), &order);
                RoutingBank::new(b.category_id(), rows).unwrap()
            })
            .collect();
        let a = route(patches.view(), &banks).unwrap();
        let b = route(patches.view(), &permuted).unwrap();
        for ((_, x), (_, y)) in a.scores.iter().zip(&b.scores) {
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn scores_bounded_for_unit_vectors(
        banks in banks(),
        patches in prop::collection::vec(-2.0f32..2.0, 5 * 4)
            .prop_map(|v| Array2::from_shape_vec((5, 4), v).unwrap()),
    ) {
        let d = route(patches.view(), &banks).unwrap();
        for (_, s) in &d.scores {
            prop_assert!((0.0..=4.0 + 1e-9).contains(s));
        }
        let best = d.scores.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let chosen = d.scores.iter().find(|(c, _)| *c == d.category_id).unwrap().1;
        prop_assert_eq!(chosen, best);
    }
}

#[test]
fn patches_equal_to_prototypes_route_to_their_category() {
    let a = ndarray::array![[1.0f32, 0.2, 0.0], [0.9, 0.0, 0.3]];
    let b = ndarray::array![[0.0f32, 1.0, 0.1], [0.0, 0.2, 1.0]];
    let banks = [
        build_routing_bank("a", a.view(), 2).unwrap(),
        build_routing_bank("b", b.view(), 2).unwrap(),
    ];
    let d = route(a.view(), &banks).unwrap();
    assert_eq!(d.category_id, "a");
    assert!(d.scores[0].1 < 1e-12);
}
