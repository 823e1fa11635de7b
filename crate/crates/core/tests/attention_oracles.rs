mod common;

use common::*;
use point_transformer::attention::{AttentionConfig, AttentionVariant, Normalize, Operator, PointTransformerLayer, PosMode};
use point_transformer::geometry::{knn_self, Point3};
use point_transformer::rng;
use proptest::prelude::*;

fn instance(variant: AttentionVariant, seed: u64, n: usize, k: usize, d: usize) -> (PointTransformerLayer, Vec<Vec<f64>>, Vec<Point3>) {
    let mut r = rng(seed);
    let p = points(n, &mut r);
    let x = matrix(n, d, &mut r);
    let layer = PointTransformerLayer::new(AttentionConfig::new(d, k, variant).unwrap(), &mut rng::seeded(seed));
    (layer, x, p)
}

#[test]
fn every_variant_matches_the_loop_reference() {
    let mut variants = AttentionVariant::all();
    variants.push(AttentionVariant { operator: Operator::Scalar, scaled_dot: true, ..AttentionVariant::default() });
    for v in variants {
        for seed in 0..5 {
            let (mut layer, x, p) = instance(v, seed, 20, 6, 5);
            let table = knn_self(&p, 6).unwrap();
            let nbrs: Vec<Vec<usize>> = (0..20).map(|i| table.row(i).to_vec()).collect();
            let got = rows_of(&layer.forward(&grid(&x), &p, &table).unwrap());
            let expect = attention_reference(&layer, &x, &p, &nbrs);
            let err = max_abs_diff(&got, &expect);
            assert!(err < 1e-10, "{}: {err}", v.label());
        }
    }
}

#[test]
fn parameters_follow_the_variant() {
    let names = |v: AttentionVariant| {
        let (mut layer, ..) = instance(v, 0, 4, 2, 3);
        let mut out = Vec::new();
        use point_transformer::nn::Parameterized;
        layer.visit_params(&mut |n, _| out.push(n.split('.').next().unwrap().to_string()));
        out.dedup();
        out
    };
    let mk = |operator, pos_mode| AttentionVariant { operator, pos_mode, ..AttentionVariant::default() };
    assert_eq!(names(mk(Operator::Vector, PosMode::Relative)), ["phi", "psi", "alpha", "gamma", "theta"]);
    assert_eq!(names(mk(Operator::Vector, PosMode::None)), ["phi", "psi", "alpha", "gamma"]);
    assert_eq!(names(mk(Operator::Scalar, PosMode::RelativeAttnOnly)), ["phi", "psi", "alpha", "theta_scalar"]);
    assert_eq!(names(mk(Operator::Scalar, PosMode::RelativeFeatOnly)), ["phi", "psi", "alpha", "theta"]);
    assert_eq!(names(mk(Operator::MlpPool, PosMode::Relative)), ["mlp"]);
}

#[test]
fn wrong_neighbour_table_is_rejected() {
    let (mut layer, x, p) = instance(AttentionVariant::default(), 0, 10, 4, 3);
    let table = knn_self(&p, 3).unwrap();
    assert!(layer.forward(&grid(&x), &p, &table).is_err());
    let table = knn_self(&p, 4).unwrap();
    assert!(layer.forward(&grid(&x[..9]), &p, &table).is_err());
    assert!(layer.backward(&grid(&x)).is_err());
}

#[test]
fn neighbourhood_shrinks_to_small_sets() {
    let (mut layer, x, p) = instance(AttentionVariant::default(), 0, 3, 16, 4);
    let table = knn_self(&p, layer.effective_k(3)).unwrap();
    assert_eq!(layer.forward(&grid(&x), &p, &table).unwrap().shape(), &[3, 4]);
}

fn variant_strategy() -> impl Strategy<Value = AttentionVariant> {
    (0usize..40).prop_map(|i| AttentionVariant::all()[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_weights_sum_to_one(v in variant_strategy(), seed in 0u64..10_000) {
        prop_assume!(v.normalize == Normalize::Softmax);
        prop_assume!(matches!(v.operator, Operator::Vector | Operator::Scalar));
        let (mut layer, x, p) = instance(v, seed, 16, 5, 4);
        let table = knn_self(&p, 5).unwrap();
        layer.forward(&grid(&x), &p, &table).unwrap();
        let w = layer.last_weights().unwrap();
        let c = w.shape()[2];
        for i in 0..16 {
            for ch in 0..c {
                let s: f64 = (0..5).map(|t| w.data()[(i * 5 + t) * c + ch]).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relative_encodings_ignore_translation(v in variant_strategy(), seed in 0u64..10_000, shift in prop::array::uniform3(-50.0f64..50.0)) {
        prop_assume!(!v.pos_mode.is_absolute());
        let (mut layer, x, p) = instance(v, seed, 16, 5, 4);
        let moved: Vec<Point3> = p.iter().map(|q| [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]).collect();
        let a = layer.forward(&grid(&x), &p, &knn_self(&p, 5).unwrap()).unwrap();
        let b = layer.forward(&grid(&x), &moved, &knn_self(&moved, 5).unwrap()).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn permuting_points_permutes_outputs(v in variant_strategy(), seed in 0u64..10_000) {
        let (mut layer, x, p) = instance(v, seed, 16, 5, 4);
        let mut perm: Vec<usize> = (0..16).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng(seed ^ 77));
        let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let pp: Vec<Point3> = perm.iter().map(|&i| p[i]).collect();
        let a = rows_of(&layer.forward(&grid(&x), &p, &knn_self(&p, 5).unwrap()).unwrap());
        let b = rows_of(&layer.forward(&grid(&xp), &pp, &knn_self(&pp, 5).unwrap()).unwrap());
        let a_perm: Vec<Vec<f64>> = perm.iter().map(|&i| a[i].clone()).collect();
        prop_assert!(max_abs_diff(&a_perm, &b) < 1e-9);
    }
}

#[test]
fn absolute_encoding_sees_translation() {
    for op in [Operator::Vector, Operator::Scalar] {
        let v = AttentionVariant { operator: op, pos_mode: PosMode::Absolute, ..AttentionVariant::default() };
        let (mut layer, x, p) = instance(v, 5, 16, 5, 4);
        let moved: Vec<Point3> = p.iter().map(|q| [q[0] + 3.0, q[1] - 2.0, q[2] + 1.0]).collect();
        let a = layer.forward(&grid(&x), &p, &knn_self(&p, 5).unwrap()).unwrap();
        let b = layer.forward(&grid(&x), &moved, &knn_self(&moved, 5).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-3, "{}", v.label());
    }
}
