use lossforge_core::expr::gradcheck::{check_point, PointCheck, FD_STEP};
use lossforge_core::expr::{random_tree, EvalPoint, LossExpr, TreeConstraints};
use lossforge_core::losses::{f1_tree, f2_tree, f3_tree, f4_tree, ngl_tree};
use proptest::prelude::*;

const GRADIENT_TOLERANCE: f64 = 1e-5;

fn simplex(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn text_round_trips(seed in any::<u64>()) {
        let e = random_tree(&TreeConstraints::default(), seed).unwrap();
        let back = LossExpr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn json_round_trips(seed in any::<u64>()) {
        let e = random_tree(&TreeConstraints::default(), seed).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        prop_assert_eq!(serde_json::from_str::<LossExpr>(&json).unwrap(), e);
    }

    #[test]
    fn random_trees_are_valid(
        seed in any::<u64>(),
        min_height in 1usize..6,
        extra in 0usize..60,
    ) {
        let max_size = ((1usize << min_height) - 1).max(min_height + 1).max(3) + extra;
        let constraints = TreeConstraints {
            min_height,
            max_size,
            max_init_height: min_height + 2,
            ..Default::default()
        };
        let e = random_tree(&constraints, seed).unwrap();
        prop_assert!(e.validate(&constraints).is_valid(), "{}", e);
    }

    #[test]
    fn evaluation_is_mean_of_classes(
        seed in any::<u64>(),
        weights in prop::collection::vec(0.01f64..1.0, 2..10),
        class in 0usize..10,
    ) {
        let e = random_tree(&TreeConstraints::default(), seed).unwrap();
        let y = simplex(&weights);
        let class = class % y.len();
        let point = EvalPoint::with_class(y.clone(), class).unwrap();
        let expected: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &p)| e.eval_scalar(p, if i == class { 1.0 } else { 0.0 }))
            .sum::<f64>()
            / y.len() as f64;
        match e.evaluate(&point) {
            Ok(v) => prop_assert!((v - expected).abs() <= 1e-9 * expected.abs().max(1.0)),
            Err(_) => prop_assert!(!expected.is_finite()),
        }
    }

    #[test]
    fn class_relabeling_is_symmetric(
        seed in any::<u64>(),
        p in 0.0f64..=1.0,
    ) {
        let e = random_tree(&TreeConstraints::default(), seed).unwrap();
        let a = e.evaluate(&EvalPoint::binary(p, 1).unwrap());
        let b = e.evaluate(&EvalPoint::new(vec![1.0 - p, p], vec![0.0, 1.0]).unwrap());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn symbolic_derivative_matches_differences(
        seed in any::<u64>(),
        p in 0.001f64..0.999,
        r in 0u8..2,
    ) {
        let e = random_tree(&TreeConstraints::default(), seed).unwrap();
        let d = e.differentiate();
        let check = check_point(&e, &d, p, f64::from(r), FD_STEP, GRADIENT_TOLERANCE);
        prop_assert!(!matches!(check, PointCheck::Disagrees { .. }), "{}: {:?}", e, check);
    }
}

#[test]
fn thousand_random_trees_have_correct_derivatives() {
    let constraints = TreeConstraints::default();
    let (mut agreed, mut skipped) = (0, 0);
    for seed in 0..1000 {
        let e = random_tree(&constraints, seed).unwrap();
        let d = e.differentiate();
        for k in 0..20 {
            let p = (k as f64 + 0.5) / 20.0;
            for r in [0.0, 1.0] {
                match check_point(&e, &d, p, r, FD_STEP, GRADIENT_TOLERANCE) {
                    PointCheck::Agrees { .. } => agreed += 1,
                    PointCheck::Skipped(_) => skipped += 1,
                    bad => panic!("seed {seed}, p {p}, r {r}: {e}: {bad:?}"),
                }
            }
        }
    }
    assert!(agreed >= 9 * (agreed + skipped) / 10, "agreed {agreed}, skipped {skipped}");
}

#[test]
fn catalog_derivatives_match_differences() {
    for (name, tree) in [
        ("ngl", ngl_tree()),
        ("f1", f1_tree()),
        ("f2", f2_tree()),
        ("f3", f3_tree()),
        ("f4", f4_tree()),
    ] {
        let d = tree.differentiate();
        let mut agreed = 0;
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            for r in [0.0, 1.0] {
                match check_point(&tree, &d, p, r, FD_STEP, GRADIENT_TOLERANCE) {
                    PointCheck::Agrees { .. } => agreed += 1,
                    PointCheck::Skipped(_) => {}
                    bad => panic!("{name} at p {p}, r {r}: {bad:?}"),
                }
            }
        }
        assert!(agreed > 1900, "{name}: only {agreed} points checked");
    }
}
